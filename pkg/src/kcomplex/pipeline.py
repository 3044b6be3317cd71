"""Config-driven stage graph from edit events to every plot-ready artifact.

Stages exchange data through files only. Each stage's key hashes its
parameters and the digests of every file it reads; a stage whose key and
outputs match the previous manifest is skipped.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import timedelta
from functools import lru_cache
from pathlib import Path
from typing import Callable

from kcomplex import __version__, _io
from kcomplex.behavior import (
    dancer_score,
    lorenz_gini,
    read_embeddings,
    revert_rate_gap,
    sessionize,
    tally_editors,
    write_lorenz,
)
from kcomplex.complexity import compute_complexity, rank_articles_by_pci, read_eci, write_scores
from kcomplex.errors import ConfigError, KComplexError
from kcomplex.geo import (
    CountryComplexity,
    build_weights,
    rank_transition,
    read_views,
    weighted_eci,
    write_map,
    write_ranking,
)
from kcomplex.matrix import (
    FORMAT_VERSION,
    CorpusSlice,
    build_activity_matrix,
    events_by_year,
    format_timestamp,
    read_events,
    read_matrix,
    write_matrix,
)
from kcomplex.proximity import auc_rows, auc_series, proximity, write_auc_series, write_proximity, AUC_HEADER
from kcomplex.rca import AdvantageMatrix, RcaMatrix, binarize, compute_rca
from kcomplex.regress import read_indicators, regress_eci, write_regression
from kcomplex.similarity import log_rca_pearson, portfolio_cosine, write_similarity

log = logging.getLogger(__name__)

DEFAULT_PARAMS = {
    "rca_threshold": 1.0,
    "exclude_bots": True,
    "eci_method": "eigenvector",
    "eci_iterations": 200,
    "eci_tolerance": 1e-10,
    "pci_top_n": 10,
    "similarity_ordering": "seriation",
    "log_rca_epsilon": None,
    "yearly_similarity": True,
    "predict_candidates": "unedited",
    "predict_l2": 0.0,
    "snapshot_year": 2016,
    "country_top_n": None,
    "revert_quantile": 0.5,
    "engagement_mode": "pair",
    "revert_lookback": None,
    "session_timeout_minutes": 60,
}
STAGE_TOGGLES = ("complexity", "similarity", "proximity", "predict", "geo", "regress", "stats")
PATH_KEYS = ("events", "views", "indicators", "embeddings", "topics")
TOP_KEYS = frozenset(PATH_KEYS + ("output_dir", "slices", "params", "stages", "regress", "format_version"))
SLICE_KEYS = frozenset({"label", "genre", "years"})
REGRESS_KEYS = frozenset({"indicator", "year", "top_n", "log10"})
LABEL_RE = re.compile(r"^[A-Za-z0-9_.-]+$")

ARTIFACT_CLASSES = {
    "similarity_matrices": re.compile(r"similarity_[a-z_]+(_\d{4})?\.csv$"),
    "pci_top_n": re.compile(r"pci_top\.csv$"),
    "country_eci": re.compile(r"country_(eci|ranking|rank_transition)\.csv$"),
    "auc_series": re.compile(r"auc(_series)?\.csv$"),
    "lorenz_gini": re.compile(r"lorenz\.(csv|json)$"),
    "regression_fit": re.compile(r"regress_[^/]+\.(csv|json)$"),
}


def _check_keys(d: dict, allowed, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key{'s' if len(unknown) > 1 else ''} in {where}: {', '.join(unknown)}")


@dataclass(frozen=True)
class SliceSpec:
    label: str
    genre: str | None = None
    years: tuple[int, int] | None = None

    def corpus_slice(self) -> CorpusSlice:
        return CorpusSlice(self.genre, self.years, (self.label,))


@dataclass
class PipelineConfig:
    base_dir: Path
    events: Path
    output_dir: Path
    views: Path | None = None
    indicators: Path | None = None
    embeddings: Path | None = None
    topics: Path | None = None
    slices: list[SliceSpec] = field(default_factory=lambda: [SliceSpec("all")])
    params: dict = field(default_factory=lambda: dict(DEFAULT_PARAMS))
    stages: dict = field(default_factory=lambda: {s: True for s in STAGE_TOGGLES})
    regress: list[dict] = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "PipelineConfig":
        base = Path(base_dir)
        _check_keys(d, TOP_KEYS, "config")
        if "events" not in d:
            raise ConfigError("config needs an 'events' path")
        if d.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
            raise ConfigError(f"unsupported format_version {d['format_version']!r}")
        paths = {}
        for k in PATH_KEYS:
            if d.get(k) is None:
                continue
            p = Path(d[k])
            p = p if p.is_absolute() else base / p
            if not p.is_file():
                raise ConfigError(f"{k}: file not found: {p}")
            paths[k] = p
        params = dict(DEFAULT_PARAMS)
        _check_keys(d.get("params", {}), DEFAULT_PARAMS, "params")
        params.update(d.get("params", {}))
        stages = {s: True for s in STAGE_TOGGLES}
        _check_keys(d.get("stages", {}), STAGE_TOGGLES, "stages")
        stages.update(d.get("stages", {}))
        slices = []
        for i, s in enumerate(d.get("slices", [{"label": "all"}])):
            _check_keys(s, SLICE_KEYS, f"slices[{i}]")
            label = s.get("label")
            if not label or not LABEL_RE.match(label):
                raise ConfigError(f"slices[{i}]: label must match {LABEL_RE.pattern}")
            years = tuple(s["years"]) if s.get("years") else None
            slices.append(SliceSpec(label, s.get("genre"), years))
        if len({s.label for s in slices}) != len(slices):
            raise ConfigError("slice labels must be unique")
        regress = []
        for i, r in enumerate(d.get("regress", [])):
            _check_keys(r, REGRESS_KEYS, f"regress[{i}]")
            if "indicator" not in r:
                raise ConfigError(f"regress[{i}]: 'indicator' is required")
            regress.append({"year": params["snapshot_year"], "top_n": None, "log10": None, **r})
        out = Path(d.get("output_dir", "out"))
        return cls(
            base_dir=base,
            events=paths["events"],
            output_dir=out if out.is_absolute() else base / out,
            views=paths.get("views"),
            indicators=paths.get("indicators"),
            embeddings=paths.get("embeddings"),
            topics=paths.get("topics"),
            slices=slices,
            params=params,
            stages=stages,
            regress=regress,
        )

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(data, path.parent)


@dataclass
class Stage:
    name: str
    deps: tuple[str, ...]
    sources: tuple[Path, ...]
    params: dict
    run: Callable  # (dep_outputs: dict[str, list[Path]]) -> list[Path]


@dataclass
class PipelineResult:
    manifest: dict
    executed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)
    blocked: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed and not self.blocked


@lru_cache(maxsize=8)
def _load_events(path: str, digest: str, topics: str | None, topics_digest: str | None):
    events = read_events(path)
    if topics:
        from kcomplex.ingest.harvest import read_topic_labels, tag_events

        events = tag_events(events, read_topic_labels(topics))
    return tuple(events)


def _events(cfg: PipelineConfig):
    t = str(cfg.topics) if cfg.topics else None
    return _load_events(str(cfg.events), _io.sha256_file(cfg.events), t, _io.sha256_file(t) if t else None)


def _find(paths, name):
    for p in paths:
        if p.name == name:
            return p
    raise KeyError(name)


def build_stages(cfg: PipelineConfig) -> list[Stage]:
    p = cfg.params
    out = cfg.output_dir
    on = cfg.stages
    stages: list[Stage] = []
    auc_stages, geo_stages = [], []
    for s in cfg.slices:
        d = out / s.label
        sl = s.corpus_slice()
        src_events = (cfg.events,) + ((cfg.topics,) if cfg.topics else ())

        def matrix_stage(_, d=d, sl=sl):
            events = [e for e in _events(cfg) if sl.contains(e)]
            written = [d / "matrix.csv"]
            write_matrix(build_activity_matrix(events, sl, p["exclude_bots"]), written[0])
            for year, evs in events_by_year(events).items():
                path = d / f"matrix_{year}.csv"
                try:
                    write_matrix(build_activity_matrix(evs, sl, p["exclude_bots"]), path)
                except KComplexError:
                    continue
                written.append(path)
            return written

        def rca_stage(deps, d=d, s=s):
            rca = compute_rca(read_matrix(_find(deps[f"matrix:{s.label}"], "matrix.csv")))
            write_matrix(rca, d / "rca.csv")
            write_matrix(binarize(rca, p["rca_threshold"]), d / "advantage.csv")
            return [d / "rca.csv", d / "rca.json", d / "advantage.csv", d / "advantage.json"]

        def complexity_stage(deps, d=d, s=s):
            adv = read_matrix(_find(deps[f"rca:{s.label}"], "advantage.csv"), AdvantageMatrix)
            scores = compute_complexity(adv, p["eci_method"], p["eci_iterations"], p["eci_tolerance"])
            write_scores(scores, d / "eci.csv", d / "pci.csv", d / "complexity.json")
            top = rank_articles_by_pci(scores, min(p["pci_top_n"], len(scores.articles)))
            _io.write_csv(d / "pci_top.csv", ("rank", "article", "pci"), ((i + 1, a, v) for i, (a, v) in enumerate(top)))
            return [d / "eci.csv", d / "pci.csv", d / "complexity.json", d / "pci_top.csv"]

        def similarity_stage(deps, d=d, s=s):
            mpaths = deps[f"matrix:{s.label}"]
            rca = read_matrix(_find(deps[f"rca:{s.label}"], "rca.csv"), RcaMatrix)
            written = []

            def emit(sim, name):
                path = d / name
                write_similarity(sim, path, p["similarity_ordering"])
                written.extend([path, path.with_name(path.stem + "_support.csv"), _io.sidecar_path(path)])

            emit(portfolio_cosine(read_matrix(_find(mpaths, "matrix.csv"))), "similarity_cosine.csv")
            emit(log_rca_pearson(rca, p["log_rca_epsilon"]), "similarity_log_rca.csv")
            if p["yearly_similarity"]:
                for mp in sorted(mpaths):
                    m = re.match(r"matrix_(\d{4})\.csv$", mp.name)
                    if m:
                        emit(portfolio_cosine(read_matrix(mp)), f"similarity_cosine_{m.group(1)}.csv")
            return written

        def proximity_stage(deps, d=d, s=s):
            adv = read_matrix(_find(deps[f"rca:{s.label}"], "advantage.csv"), AdvantageMatrix)
            write_proximity(d / "proximity.csv", proximity(adv))
            return [d / "proximity.csv"]

        def predict_stage(deps, d=d, s=s):
            yearly = {}
            for mp in deps[f"matrix:{s.label}"]:
                m = re.match(r"matrix_(\d{4})\.csv$", mp.name)
                if m:
                    yearly[int(m.group(1))] = read_matrix(mp)
            runs = auc_series(yearly, threshold=p["rca_threshold"], l2=p["predict_l2"], candidates=p["predict_candidates"])
            write_auc_series(d / "auc.csv", {s.label: runs})
            return [d / "auc.csv"]

        def geo_stage(deps, d=d, s=s):
            eci = read_eci(_find(deps[f"complexity:{s.label}"], "eci.csv"))
            result = weighted_eci(build_weights(read_views(cfg.views), p["snapshot_year"]), eci)
            write_map(d / "country_eci.csv", result)
            write_ranking(d / "country_ranking.csv", result, p["country_top_n"])
            return [d / "country_eci.csv", d / "country_eci.json", d / "country_ranking.csv"]

        def regress_stage(deps, d=d, s=s):
            countries = _read_country_map(_find(deps[f"geo:{s.label}"], "country_eci.csv"))
            table = read_indicators(cfg.indicators)
            written = []
            for r in cfg.regress:
                reg = regress_eci(countries, table, r["indicator"], r["year"], r["top_n"], r["log10"])
                path = d / f"regress_{_safe(r['indicator'])}_{r['year']}.csv"
                write_regression(path, reg)
                written.extend([path, _io.sidecar_path(path)])
            return written

        L = s.label
        stages.append(Stage(f"matrix:{L}", (), src_events, {"slice": sl.as_meta(), "exclude_bots": p["exclude_bots"]}, matrix_stage))
        stages.append(Stage(f"rca:{L}", (f"matrix:{L}",), (), {"threshold": p["rca_threshold"]}, rca_stage))
        if on["complexity"]:
            stages.append(Stage(f"complexity:{L}", (f"rca:{L}",), (), _pick(p, "eci_method", "eci_iterations", "eci_tolerance", "pci_top_n"), complexity_stage))
        if on["similarity"]:
            stages.append(Stage(f"similarity:{L}", (f"matrix:{L}", f"rca:{L}"), (), _pick(p, "similarity_ordering", "log_rca_epsilon", "yearly_similarity"), similarity_stage))
        if on["proximity"]:
            stages.append(Stage(f"proximity:{L}", (f"rca:{L}",), (), {}, proximity_stage))
        if on["predict"]:
            stages.append(Stage(f"predict:{L}", (f"matrix:{L}",), (), _pick(p, "rca_threshold", "predict_l2", "predict_candidates"), predict_stage))
            auc_stages.append(f"predict:{L}")
        if on["geo"] and on["complexity"] and cfg.views:
            stages.append(Stage(f"geo:{L}", (f"complexity:{L}",), (cfg.views,), _pick(p, "snapshot_year", "country_top_n"), geo_stage))
            geo_stages.append(f"geo:{L}")
            if on["regress"] and cfg.indicators and cfg.regress:
                stages.append(Stage(f"regress:{L}", (f"geo:{L}",), (cfg.indicators,), {"regress": cfg.regress}, regress_stage))

    if on["stats"]:
        stages.append(Stage("stats", (), (cfg.events,) + ((cfg.embeddings,) if cfg.embeddings else ()), _pick(p, "exclude_bots", "revert_quantile", "engagement_mode", "revert_lookback", "session_timeout_minutes"), lambda deps: _stats_stage(cfg, out)))

    def report_stage(deps):
        written = []
        if auc_stages:
            rows = []
            for name in auc_stages:
                for _, row in _io.read_csv_rows(_find(deps[name], "auc.csv"), AUC_HEADER):
                    rows.append(row)
            _io.write_csv(out / "auc_series.csv", AUC_HEADER, rows)
            written.append(out / "auc_series.csv")
        if geo_stages:
            per_slice = {n.split(":", 1)[1]: _read_country_map(_find(deps[n], "country_eci.csv")) for n in geo_stages}
            _io.write_csv(out / "country_rank_transition.csv", ("slice", "country", "rank"), rank_transition(per_slice, p["country_top_n"]))
            written.append(out / "country_rank_transition.csv")
        return written

    if auc_stages or geo_stages:
        stages.append(Stage("report", tuple(auc_stages + geo_stages), (), {"country_top_n": p["country_top_n"]}, report_stage))
    return stages


def _stats_stage(cfg: PipelineConfig, out: Path) -> list[Path]:
    p = cfg.params
    events = _events(cfg)
    tallies, missing = tally_editors(events, p["revert_lookback"], p["exclude_bots"])
    write_lorenz(out / "lorenz.csv", lorenz_gini(tallies))
    gap = revert_rate_gap(tallies, p["revert_quantile"], p["engagement_mode"])
    _io.write_json(
        out / "revert_gap.json",
        {
            "engagement_mode": p["engagement_mode"],
            "quantile": p["revert_quantile"],
            "threshold": gap.threshold,
            "gap": gap.gap,
            "z": gap.z,
            "p": gap.p,
            "significant_p_lt_0.01": gap.significant,
            "rate_top": gap.rate_top,
            "rate_bottom": gap.rate_bottom,
            "n_top": gap.n_top,
            "n_bottom": gap.n_bottom,
            "missing_checksums": missing,
        },
    )
    written = [out / "lorenz.csv", out / "lorenz.json", out / "revert_gap.json"]
    if cfg.embeddings:
        emb = read_embeddings(cfg.embeddings)
        human = [e for e in events if not (p["exclude_bots"] and e.is_bot)]
        rows, skipped_steps, undefined = [], 0, 0
        for sess in sessionize(human, timedelta(minutes=p["session_timeout_minutes"])):
            r = dancer_score(sess, emb)
            skipped_steps += r.skipped
            if r.score is None:
                undefined += 1
                continue
            rows.append((sess.editor, format_timestamp(sess.start), len(sess.steps), r.n_steps, r.score))
        _io.write_csv(out / "dancer.csv", ("editor", "start", "n_edits", "n_steps", "dancer_score"), rows)
        scores = [r[-1] for r in rows]
        _io.write_json(
            out / "dancer.json",
            {
                "sessions_scored": len(rows),
                "sessions_undefined": undefined,
                "steps_skipped_missing_embedding": skipped_steps,
                "mean_dancer_score": sum(scores) / len(scores) if scores else None,
                "session_timeout_minutes": p["session_timeout_minutes"],
            },
        )
        written += [out / "dancer.csv", out / "dancer.json"]
    return written


def _read_country_map(path) -> dict[str, CountryComplexity]:
    out = {}
    for _, row in _io.read_csv_rows(path, ("country_iso2", "value", "coverage", "flag")):
        out[row[0]] = CountryComplexity(float(row[1]), float(row[2]))
    return out


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def _pick(d: dict, *keys) -> dict:
    return {k: d[k] for k in keys}


def _rel(path: Path, cfg: PipelineConfig) -> str:
    for base in (cfg.output_dir, cfg.base_dir):
        try:
            return Path(path).resolve().relative_to(Path(base).resolve()).as_posix()
        except ValueError:
            continue
    return Path(path).resolve().as_posix()


def _stage_key(stage: Stage, inputs: dict[str, str]) -> str:
    blob = _io.dumps_json({"stage": stage.name, "version": __version__, "params": stage.params, "inputs": inputs})
    return _io.sha256_bytes(blob.encode("utf-8"))


def _topo_waves(stages: list[Stage]) -> list[list[Stage]]:
    by_name = {s.name: s for s in stages}
    level: dict[str, int] = {}

    def depth(name):
        if name not in level:
            level[name] = 1 + max((depth(d) for d in by_name[name].deps), default=-1)
        return level[name]

    for s in stages:
        depth(s.name)
    waves: list[list[Stage]] = [[] for _ in range(max(level.values(), default=-1) + 1)]
    for s in stages:
        waves[level[s.name]].append(s)
    return waves


MANIFEST_NAME = "manifest.json"


def run_pipeline(cfg: PipelineConfig, workers: int = 4) -> PipelineResult:
    """Execute enabled stages in dependency order and write the manifest.

    Independent stages of a wave run concurrently. A failing stage blocks
    its dependents; unrelated stages still complete.
    """
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / MANIFEST_NAME
    previous = {}
    if manifest_path.exists():
        try:
            previous = _io.read_json(manifest_path).get("stages", {})
        except (ValueError, OSError):
            previous = {}
    stages = build_stages(cfg)
    result = PipelineResult(manifest={})
    records: dict[str, dict] = {}
    outputs: dict[str, list[Path]] = {}
    bad: set[str] = set()

    def execute(stage: Stage):
        if any(d in bad for d in stage.deps):
            return stage, "blocked", None, None
        deps = {d: outputs[d] for d in stage.deps}
        files = list(stage.sources) + [f for d in stage.deps for f in outputs[d]]
        inputs = {_rel(f, cfg): _io.sha256_file(f) for f in files}
        key = _stage_key(stage, dict(sorted(inputs.items())))
        prev = previous.get(stage.name)
        if prev and prev.get("key") == key and _outputs_intact(prev.get("outputs", {}), out):
            return stage, "skipped", prev, [out / r for r in sorted(prev["outputs"])]
        try:
            written = stage.run(deps)
        except KComplexError as exc:
            return stage, "failed", {"params": stage.params, "inputs": inputs, "error": f"{type(exc).__name__}: {exc}"}, None
        written = sorted(set(written))
        rec = {
            "key": key,
            "params": stage.params,
            "inputs": dict(sorted(inputs.items())),
            "outputs": {_rel(f, cfg): _io.sha256_file(f) for f in written},
        }
        return stage, "executed", rec, written

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for wave in _topo_waves(stages):
            for stage, status, rec, written in pool.map(execute, wave):
                if status == "blocked":
                    bad.add(stage.name)
                    result.blocked.append(stage.name)
                    records[stage.name] = {"blocked_by": sorted(d for d in stage.deps if d in bad)}
                    continue
                records[stage.name] = rec
                if status == "failed":
                    bad.add(stage.name)
                    result.failed[stage.name] = rec["error"]
                    log.error("stage %s failed: %s", stage.name, rec["error"])
                    continue
                outputs[stage.name] = written
                (result.executed if status == "executed" else result.skipped).append(stage.name)

    artifacts: dict[str, list[str]] = {k: [] for k in ARTIFACT_CLASSES}
    for rec in records.values():
        for rel in rec.get("outputs", {}):
            for cls, pattern in ARTIFACT_CLASSES.items():
                if pattern.search(rel):
                    artifacts[cls].append(rel)
    manifest = {
        "tool": "kcomplex",
        "version": __version__,
        "format_version": FORMAT_VERSION,
        "params": cfg.params,
        "stages": dict(sorted(records.items())),
        "artifacts": {k: sorted(v) for k, v in artifacts.items()},
    }
    _io.write_json(manifest_path, manifest)
    result.manifest = manifest
    return result


def _outputs_intact(recorded: dict, out: Path) -> bool:
    for rel, digest in recorded.items():
        f = out / rel
        if not f.exists() or _io.sha256_file(f) != digest:
            return False
    return True
