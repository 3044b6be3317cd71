"""``kcomplex`` command line: one subcommand per analysis step plus ``report`` for the full pipeline.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 network error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from kcomplex import __version__, _io
from kcomplex.errors import ConfigError, DataError, KComplexError, UsageError

log = logging.getLogger("kcomplex")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NETWORK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _slice_args(p):
    p.add_argument("--genre", help="keep only events tagged with this genre/topic")
    p.add_argument("--year-from", type=int, help="first year to include")
    p.add_argument("--year-to", type=int, help="last year to include (inclusive)")
    p.add_argument("--include-bots", action="store_true", help="count edits flagged as bot edits")


def _corpus_slice(args):
    from kcomplex.matrix import CorpusSlice

    years = None
    if args.year_from is not None or args.year_to is not None:
        years = (args.year_from if args.year_from is not None else 1, args.year_to if args.year_to is not None else 9999)
    return CorpusSlice(args.genre, years)


# --- handlers ----------------------------------------------------------------


def cmd_matrix(args):
    from kcomplex.matrix import build_activity_matrix, events_by_year, read_events, write_matrix

    sl = _corpus_slice(args)
    events = [e for e in read_events(args.events) if sl.contains(e)]
    write_matrix(build_activity_matrix(events, sl, not args.include_bots), args.out)
    if args.by_year:
        out = Path(args.out)
        for year, evs in events_by_year(events).items():
            write_matrix(build_activity_matrix(evs, sl, not args.include_bots), out.with_name(f"{out.stem}_{year}{out.suffix}"))


def cmd_rca(args):
    from kcomplex.matrix import ActivityMatrix, read_matrix, write_matrix
    from kcomplex.rca import binarize, compute_rca

    rca = compute_rca(read_matrix(args.input, ActivityMatrix))
    write_matrix(rca, args.out)
    if args.advantage:
        write_matrix(binarize(rca, args.threshold), args.advantage)


def cmd_complexity(args):
    from kcomplex.complexity import compute_complexity, rank_articles_by_pci, write_scores
    from kcomplex.matrix import read_matrix
    from kcomplex.rca import AdvantageMatrix

    adv = read_matrix(args.input, AdvantageMatrix)
    scores = compute_complexity(adv, args.method, args.iterations, args.tolerance)
    write_scores(scores, args.eci_out, args.pci_out, _io.sidecar_path(args.eci_out))
    if args.top_out:
        top = rank_articles_by_pci(scores, min(args.top_n, len(scores.articles)))
        _io.write_csv(args.top_out, ("rank", "article", "pci"), ((i + 1, a, v) for i, (a, v) in enumerate(top)))
    if not scores.converged:
        log.warning("reflections did not converge in %s iterations", scores.iterations)


def cmd_similarity(args):
    from kcomplex.matrix import read_matrix
    from kcomplex.rca import RcaMatrix, compute_rca
    from kcomplex.similarity import log_rca_pearson, portfolio_cosine, write_similarity

    m = read_matrix(args.input)
    if args.kind == "cosine":
        sim = portfolio_cosine(m)
    else:
        rca = m if isinstance(m, RcaMatrix) else compute_rca(m)
        sim = log_rca_pearson(rca, args.epsilon)
    write_similarity(sim, args.out, args.ordering)


def cmd_proximity(args):
    from kcomplex.matrix import read_matrix
    from kcomplex.proximity import density_matrix, proximity, write_proximity
    from kcomplex.rca import AdvantageMatrix

    adv = read_matrix(args.input, AdvantageMatrix)
    phi = proximity(adv)
    write_proximity(args.out, phi)
    if args.density_out:
        omega = density_matrix(adv, phi)
        rows = ((l, a, float(omega[i, j])) for i, l in enumerate(adv.languages) for j, a in enumerate(adv.articles))
        _io.write_csv(args.density_out, ("language", "article", "omega"), rows)


def cmd_predict(args):
    from kcomplex.matrix import build_activity_matrix, events_by_year, read_events
    from kcomplex.proximity import auc_series, predict_creation, write_auc_series

    sl = _corpus_slice(args)
    events = [e for e in read_events(args.events) if sl.contains(e)]
    yearly = {y: build_activity_matrix(evs, sl, not args.include_bots) for y, evs in events_by_year(events).items()}
    kw = dict(threshold=args.threshold, l2=args.l2, candidates=args.candidates)
    runs = [predict_creation(yearly, args.target_year, **kw)] if args.target_year else auc_series(yearly, **kw)
    write_auc_series(args.out, {args.label: runs})


def cmd_geo(args):
    from kcomplex.complexity import read_eci
    from kcomplex.geo import build_weights, read_views, weighted_eci, write_map, write_ranking

    result = weighted_eci(build_weights(read_views(args.views), args.snapshot_year), read_eci(args.eci))
    rejected = write_map(args.out, result)
    if rejected:
        log.warning("non-ISO country codes left out of the map: %s", ", ".join(rejected))
    if args.ranking_out:
        write_ranking(args.ranking_out, result, args.top_n)


def cmd_stats(args):
    from datetime import timedelta

    from kcomplex.behavior import (
        dancer_score,
        lorenz_gini,
        null_false_positive_rate,
        read_embeddings,
        revert_rate_gap,
        sessionize,
        tally_editors,
        write_lorenz,
    )
    from kcomplex.matrix import format_timestamp, read_events

    out = Path(args.out_dir)
    if args.null_trials:
        if args.seed is None:
            raise UsageError("--null-trials needs an explicit --seed")
        rate = null_false_positive_rate(args.null_trials, seed=args.seed)
        _io.write_json(out / "ztest_null.json", {"trials": args.null_trials, "seed": args.seed, "false_positive_rate": rate})
    if not args.events:
        return
    events = read_events(args.events)
    tallies, missing = tally_editors(events, args.lookback, not args.include_bots)
    write_lorenz(out / "lorenz.csv", lorenz_gini(tallies))
    gap = revert_rate_gap(tallies, args.quantile, args.mode)
    _io.write_json(
        out / "revert_gap.json",
        {"gap": gap.gap, "z": gap.z, "p": gap.p, "significant_p_lt_0.01": gap.significant, "n_top": gap.n_top,
         "n_bottom": gap.n_bottom, "threshold": gap.threshold, "engagement_mode": args.mode, "missing_checksums": missing},
    )
    if args.embeddings:
        emb = read_embeddings(args.embeddings)
        rows = []
        human = [e for e in events if args.include_bots or not e.is_bot]
        for s in sessionize(human, timedelta(minutes=args.session_timeout)):
            r = dancer_score(s, emb)
            if r.score is not None:
                rows.append((s.editor, format_timestamp(s.start), len(s.steps), r.n_steps, r.score))
        _io.write_csv(out / "dancer.csv", ("editor", "start", "n_edits", "n_steps", "dancer_score"), rows)


def cmd_regress(args):
    from kcomplex.pipeline import _read_country_map
    from kcomplex.regress import read_indicators, regress_eci, write_regression

    reg = regress_eci(
        _read_country_map(args.countries), read_indicators(args.indicators), args.indicator, args.year, args.top_n, args.log10
    )
    write_regression(args.out, reg)


def cmd_report(args):
    from kcomplex.pipeline import PipelineConfig, run_pipeline

    cfg = PipelineConfig.load(args.config)
    if args.output_dir:
        cfg.output_dir = Path(args.output_dir)
    result = run_pipeline(cfg, workers=args.workers)
    print(f"executed {len(result.executed)}, unchanged {len(result.skipped)}, failed {len(result.failed)}, blocked {len(result.blocked)}")
    for name, err in sorted(result.failed.items()):
        print(f"  FAILED {name}: {err}", file=sys.stderr)
    for name in result.blocked:
        print(f"  BLOCKED {name}", file=sys.stderr)
    if not result.ok:
        raise DataError("pipeline finished with stage errors")


def cmd_synth(args):
    from kcomplex.synth import write_corpus

    paths = write_corpus(args.out, args.seed)
    print(f"wrote synthetic corpus to {Path(args.out)} (config: {paths['config'].name})")


def _client(args):
    from kcomplex.ingest.client import ApiClient, FixtureTransport, RateLimiter, RequestsTransport

    if args.fixtures:
        transport = FixtureTransport(args.fixtures)
    else:
        ua = args.user_agent or os.environ.get("KCOMPLEX_USER_AGENT")
        if not ua:
            raise ConfigError("a User-Agent is required: pass --user-agent or set KCOMPLEX_USER_AGENT")
        transport = RequestsTransport(ua)
    cache = args.cache_dir or os.environ.get("KCOMPLEX_CACHE_DIR")
    return ApiClient(transport, cache, RateLimiter(args.rate), max_retries=args.retries, workers=args.workers)


def cmd_ingest(args):
    from kcomplex.geo import write_views
    from kcomplex.ingest.harvest import GenreSpec, fetch_pageviews_by_country, harvest_genre
    from kcomplex.matrix import write_events

    client = _client(args)
    if args.what == "genre":
        spec = GenreSpec.from_dict(_io.read_json(args.spec))
        api = args.api or "https://{lang}.wikipedia.org/w/api.php"
        events, skipped, resolved = harvest_genre(client, spec, api, args.salt, tuple(args.bot_suffix))
        write_events(args.out, events)
        _io.write_json(
            _io.sidecar_path(args.out),
            {"genre": spec.name, "depth": spec.depth, "articles": len(resolved.articles), "events": len(events),
             "skipped_hidden": skipped, "warnings": resolved.warnings},
        )
    else:
        api = args.api or "https://wikimedia.org/api/rest_v1/metrics/pageviews/top-by-country"
        res = fetch_pageviews_by_country(client, args.year, args.project, args.month or range(1, 13), api)
        write_views(args.out, res.rows)
        _io.write_json(
            _io.sidecar_path(args.out),
            {"snapshot_year": args.year, "excluded_projects": res.excluded_projects, "rejected_countries": res.rejected_countries},
        )
    print(f"requests: {client.requests}, cache hits: {client.cache_hits}")


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kcomplex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kcomplex {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", help="harvest events or viewership from MediaWiki services")
    p.add_argument("what", choices=("genre", "views"), help="genre revision histories or pageviews by country")
    p.add_argument("--out", required=True, help="events TSV (genre) or views CSV (views)")
    p.add_argument("--spec", help="genre spec JSON: name, seeds {lang: [categories]}, depth, languages")
    p.add_argument("--year", type=int, default=2016, help="pageview year (default 2016)")
    p.add_argument("--month", type=int, action="append", help="pageview month, repeatable (default all)")
    p.add_argument("--project", action="append", default=[], help="project code such as en.wikipedia, repeatable")
    p.add_argument("--api", help="endpoint base; for genre use {lang} as placeholder")
    p.add_argument("--user-agent", help="User-Agent sent to the API (or KCOMPLEX_USER_AGENT)")
    p.add_argument("--cache-dir", help="response cache directory (default KCOMPLEX_CACHE_DIR)")
    p.add_argument("--fixtures", help="replay recorded responses from this directory instead of the network")
    p.add_argument("--salt", default="", help="salt for hashing editor names")
    p.add_argument("--bot-suffix", action="append", default=[], help="treat usernames ending with this as bots")
    p.add_argument("--rate", type=float, default=50.0, help="request ceiling per minute (default 50)")
    p.add_argument("--retries", type=int, default=4, help="retries per request (default 4)")
    p.add_argument("--workers", type=int, default=4, help="parallel requests in flight (default 4)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("matrix", help="aggregate edit events into a language x article count matrix")
    p.add_argument("--events", required=True, help="edit-event TSV")
    p.add_argument("--out", required=True, help="matrix CSV (a JSON manifest is written next to it)")
    p.add_argument("--by-year", action="store_true", help="also write one matrix per calendar year")
    _slice_args(p)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("rca", help="revealed comparative advantage and its binary advantage matrix")
    p.add_argument("--in", dest="input", required=True, help="activity matrix CSV")
    p.add_argument("--out", required=True, help="RCA matrix CSV")
    p.add_argument("--advantage", help="also write the binarized, pruned advantage matrix here")
    p.add_argument("--threshold", type=float, default=1.0, help="RCA cutoff, inclusive (default 1.0)")
    p.set_defaults(func=cmd_rca)

    p = sub.add_parser("complexity", help="ECI of languages and PCI of articles")
    p.add_argument("--in", dest="input", required=True, help="advantage matrix CSV")
    p.add_argument("--eci-out", required=True, help="language,eci,diversity CSV")
    p.add_argument("--pci-out", required=True, help="article,pci,ubiquity CSV")
    p.add_argument("--method", choices=("eigenvector", "reflections"), default="eigenvector",
                   help="eigenvector of the language operator or method of reflections (default eigenvector)")
    p.add_argument("--iterations", type=int, default=200, help="reflection steps (default 200)")
    p.add_argument("--tolerance", type=float, default=1e-10, help="reflection convergence tolerance")
    p.add_argument("--top-n", type=int, default=10, help="rows in the PCI ranking (default 10)")
    p.add_argument("--top-out", help="write the top-N PCI ranking here")
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("similarity", help="language x language similarity matrix")
    p.add_argument("--in", dest="input", required=True, help="activity or RCA matrix CSV")
    p.add_argument("--out", required=True, help="square similarity CSV")
    p.add_argument("--kind", choices=("cosine", "log_rca"), default="cosine",
                   help="cosine of activity rows, or Pearson of log RCA (default cosine)")
    p.add_argument("--epsilon", type=float, help="log_rca only: use ln(RCA + epsilon) over all articles")
    p.add_argument("--ordering", choices=("input", "seriation"), default="seriation", help="row/column order")
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("proximity", help="article proximity and relatedness density")
    p.add_argument("--in", dest="input", required=True, help="advantage matrix CSV")
    p.add_argument("--out", required=True, help="article_a,article_b,phi CSV")
    p.add_argument("--density-out", help="also write language,article,omega here")
    p.set_defaults(func=cmd_proximity)

    p = sub.add_parser("predict", help="AUC of relatedness density for predicting first edits")
    p.add_argument("--events", required=True, help="edit-event TSV")
    p.add_argument("--out", required=True, help="AUC series CSV")
    p.add_argument("--target-year", type=int, help="score one year only (default every year after the first)")
    p.add_argument("--threshold", type=float, default=1.0, help="RCA cutoff (default 1.0)")
    p.add_argument("--l2", type=float, default=0.0, help="ridge penalty on the slope (default 0)")
    p.add_argument("--candidates", choices=("unedited", "no_advantage"), default="unedited",
                   help="at-risk pairs: never edited in training (default) or any pair without advantage")
    p.add_argument("--label", default="all", help="slice label written in the output")
    _slice_args(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("geo", help="country-level viewership-weighted ECI")
    p.add_argument("--eci", required=True, help="language,eci,diversity CSV")
    p.add_argument("--views", required=True, help="country,language,views CSV")
    p.add_argument("--out", required=True, help="choropleth table country_iso2,value,coverage,flag")
    p.add_argument("--ranking-out", help="also write the ranked country table")
    p.add_argument("--top-n", type=int, help="ranking length (default all)")
    p.add_argument("--snapshot-year", type=int, default=2016, help="viewership snapshot year recorded in outputs")
    p.set_defaults(func=cmd_geo)

    p = sub.add_parser("stats", help="Lorenz/Gini, revert-rate gap, dancer scores, z-test null check")
    p.add_argument("--events", help="edit-event TSV")
    p.add_argument("--out-dir", required=True, help="directory for the outputs")
    p.add_argument("--embeddings", help="article,v1..vd CSV of unit vectors for dancer scores")
    p.add_argument("--quantile", type=float, default=0.5, help="engagement split quantile (default 0.5)")
    p.add_argument("--mode", choices=("pair", "editor"), default="pair", help="engagement unit (default pair)")
    p.add_argument("--lookback", type=int, help="limit revert search to this many earlier revisions")
    p.add_argument("--session-timeout", type=float, default=60.0, help="minutes of inactivity that end a session")
    p.add_argument("--include-bots", action="store_true", help="keep bot edits")
    p.add_argument("--null-trials", type=int, help="Monte Carlo trials of the z-test under equal rates")
    p.add_argument("--seed", type=int, help="seed for --null-trials")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("regress", help="regress an economic indicator on country weighted ECI")
    p.add_argument("--countries", required=True, help="country table written by `geo`")
    p.add_argument("--indicators", required=True, help="country_iso2,indicator,year,value CSV")
    p.add_argument("--indicator", required=True, help="indicator code, e.g. NY.GNP.PCAP.CD")
    p.add_argument("--year", type=int, default=2016, help="indicator year (default 2016)")
    p.add_argument("--top-n", type=int, help="restrict to the top-N countries by weighted ECI")
    p.add_argument("--log10", action=argparse.BooleanOptionalAction, default=None,
                   help="log10 the indicator (default: on for per-capita income codes)")
    p.add_argument("--out", required=True, help="scatter CSV; fit parameters go to the JSON sidecar")
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("report", help="run the configured pipeline and write every artifact")
    p.add_argument("--config", required=True, help="pipeline JSON")
    p.add_argument("--output-dir", help="override the config's output_dir")
    p.add_argument("--workers", type=int, default=4, help="stages run concurrently (default 4)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write the seeded synthetic corpus and a pipeline config")
    p.add_argument("--out", required=True, help="target directory")
    p.add_argument("--seed", type=int, required=True, help="generator seed (the bundled corpus uses 0)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "ingest":
        if args.what == "genre" and not args.spec:
            parser.error("ingest genre requires --spec")
        if args.what == "views" and not args.project:
            parser.error("ingest views requires at least one --project")
    try:
        args.func(args)
    except KComplexError as exc:
        print(f"kcomplex: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"kcomplex: error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
