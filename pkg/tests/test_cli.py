import json
import subprocess
import sys

import pytest

from conftest import FIXTURES, INGEST_FIXTURES
from kcomplex.cli import build_parser, main
from kcomplex.synth import bundled_dir

SUBCOMMANDS = ("ingest", "matrix", "rca", "complexity", "similarity", "proximity", "predict", "geo", "stats", "regress", "report", "synth")


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """matrix -> rca -> complexity on the bundled events, shared by later steps."""
    d = tmp_path_factory.mktemp("cli")
    src = bundled_dir()
    assert run("matrix", "--events", src / "events.tsv", "--out", d / "m.csv", "--by-year") == 0
    assert run("rca", "--in", d / "m.csv", "--out", d / "r.csv", "--advantage", d / "a.csv") == 0
    assert run("complexity", "--in", d / "a.csv", "--eci-out", d / "eci.csv", "--pci-out", d / "pci.csv", "--top-out", d / "top.csv") == 0
    return d


def test_rca_on_two_by_two_fixture(tmp_path):
    assert run("rca", "--in", FIXTURES / "matrix_2x2.csv", "--out", tmp_path / "rca.csv") == 0
    assert (tmp_path / "rca.csv").read_bytes() == (FIXTURES / "rca_2x2_expected.csv").read_bytes()


def test_missing_required_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        run("rca", "--in", "x.csv")
    assert err.value.code == 1
    assert "usage:" in capsys.readouterr().err


def test_corrupt_csv_names_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("language,article,count\nen,Q1,x\n")
    assert run("rca", "--in", bad, "--out", tmp_path / "o.csv") == 2
    assert "line 2" in capsys.readouterr().err


def test_missing_input_is_data_error(tmp_path):
    assert run("rca", "--in", tmp_path / "nope.csv", "--out", tmp_path / "o.csv") == 2


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_documents_every_flag(cmd):
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    text = sub.format_help()
    for action in sub._actions:
        if action.option_strings and action.dest != "help":
            assert action.help, f"{cmd} {action.option_strings} lacks help"
            assert action.option_strings[-1] in text


def test_help_exits_zero():
    with pytest.raises(SystemExit) as err:
        run("--help")
    assert err.value.code == 0


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "kcomplex", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("kcomplex ")


def test_chain_outputs(chain):
    assert (chain / "m_2014.csv").exists() and (chain / "m_2016.csv").exists()
    assert (chain / "eci.csv").read_text().startswith("language,eci,diversity\n")
    assert len((chain / "top.csv").read_text().splitlines()) == 11


def test_similarity_and_proximity(chain):
    assert run("similarity", "--in", chain / "m.csv", "--out", chain / "sim.csv", "--kind", "cosine") == 0
    assert run("similarity", "--in", chain / "r.csv", "--out", chain / "siml.csv", "--kind", "log_rca") == 0
    assert run("proximity", "--in", chain / "a.csv", "--out", chain / "phi.csv", "--density-out", chain / "omega.csv") == 0
    assert (chain / "sim.csv").read_text().startswith("language,")
    assert (chain / "omega.csv").read_text().startswith("language,article,omega\n")


def test_predict(chain):
    assert run("predict", "--events", bundled_dir() / "events.tsv", "--out", chain / "auc.csv") == 0
    rows = (chain / "auc.csv").read_text().splitlines()
    assert rows[0] == "slice,year,auc,n_pos,n_neg,separated" and len(rows) == 3


def test_geo_and_regress(chain):
    src = bundled_dir()
    assert run("geo", "--eci", chain / "eci.csv", "--views", src / "views.csv", "--out", chain / "map.csv", "--ranking-out", chain / "rank.csv") == 0
    assert run("regress", "--countries", chain / "map.csv", "--indicators", src / "indicators.csv", "--indicator", "NY.GNP.PCAP.CD", "--out", chain / "fit.csv") == 0
    fit = json.loads((chain / "fit.json").read_text())
    assert fit["log10"] is True and fit["fit"]["n"] >= 3


def test_stats(tmp_path):
    src = bundled_dir()
    assert run("stats", "--events", src / "events.tsv", "--embeddings", src / "embeddings.csv", "--out-dir", tmp_path) == 0
    assert 0.0 <= json.loads((tmp_path / "lorenz.json").read_text())["gini"] < 1.0
    assert "p" in json.loads((tmp_path / "revert_gap.json").read_text())
    assert (tmp_path / "dancer.csv").read_text().startswith("editor,start,n_edits,n_steps,dancer_score\n")


def test_null_trials_need_seed(tmp_path):
    assert run("stats", "--out-dir", tmp_path, "--null-trials", "100") == 1
    assert run("stats", "--out-dir", tmp_path, "--null-trials", "200", "--seed", "3") == 0
    assert json.loads((tmp_path / "ztest_null.json").read_text())["seed"] == 3


def test_report_and_rerun(tmp_path, capsys):
    cfg = bundled_dir() / "pipeline.json"
    assert run("report", "--config", cfg, "--output-dir", tmp_path / "out") == 0
    assert run("report", "--config", cfg, "--output-dir", tmp_path / "out") == 0
    assert "executed 0," in capsys.readouterr().out.splitlines()[-1]


def test_report_bad_config_is_usage_error(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"events": "e.tsv", "bogus": 1}')
    assert run("report", "--config", p) == 1


def test_ingest_replay(tmp_path):
    spec = tmp_path / "genre.json"
    spec.write_text(json.dumps({"name": "cooking", "seeds": {"en": ["Cooking techniques"]}, "depth": 0}))
    assert run("ingest", "genre", "--spec", spec, "--fixtures", INGEST_FIXTURES, "--rate", "1e9", "--out", tmp_path / "e.tsv") == 0
    meta = json.loads((tmp_path / "e.json").read_text())
    assert meta["articles"] == 5 and meta["depth"] == 0
    assert run("ingest", "views", "--project", "en.wikipedia", "--month", "1", "--fixtures", INGEST_FIXTURES, "--rate", "1e9", "--out", tmp_path / "v.csv") == 0
    assert (tmp_path / "v.csv").read_text().splitlines()[0] == "country,language,views"


def test_ingest_unsupported_period_is_network_error(tmp_path):
    assert run("ingest", "views", "--project", "en.wikipedia", "--year", "2014", "--month", "1", "--fixtures", INGEST_FIXTURES, "--rate", "1e9", "--out", tmp_path / "v.csv") == 3


def test_ingest_requires_user_agent(tmp_path, monkeypatch):
    monkeypatch.delenv("KCOMPLEX_USER_AGENT", raising=False)
    assert run("ingest", "views", "--project", "en.wikipedia", "--out", tmp_path / "v.csv") == 1


def test_synth(tmp_path):
    assert run("synth", "--out", tmp_path, "--seed", "0") == 0
    assert (tmp_path / "events.tsv").read_bytes() == (bundled_dir() / "events.tsv").read_bytes()
