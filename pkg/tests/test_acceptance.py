"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import shutil
import socket
import threading
import time

import numpy as np
import pytest
from scipy.stats import norm

from conftest import INGEST_FIXTURES, FakeClock, dense_activity, random_advantage
from kcomplex.behavior import lorenz_gini, null_false_positive_rate, two_proportion_ztest
from kcomplex.complexity import eci_eigen, eci_reflections
from kcomplex.geo import build_weights, weighted_eci, write_views
from kcomplex.ingest import (
    ApiClient,
    FixtureTransport,
    GenreSpec,
    RateLimiter,
    fetch_pageviews_by_country,
    fetch_revisions,
    resolve_genre_articles,
)
from kcomplex.matrix import ActivityMatrix, write_events
from kcomplex.pipeline import ARTIFACT_CLASSES, PipelineConfig, run_pipeline
from kcomplex.proximity import auc, auc_null_se, density_matrix, fit_logistic, log_likelihood, predict_creation, proximity
from kcomplex.rca import AdvantageMatrix, RcaMatrix, advantage_from_dense, binarize, compute_rca
from kcomplex.similarity import log_rca_pearson, portfolio_cosine
from kcomplex.synth import bundled_dir


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n:>2} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


# --- 1. RCA oracle ------------------------------------------------------------------


def naive_rca(E):
    rows = E.tolist()
    total = float(sum(map(sum, rows)))
    col = [float(sum(r[a] for r in rows)) for a in range(len(rows[0]))]
    out = []
    for r in rows:
        rs = float(sum(r))
        out.append([(v / rs) / (col[a] / total) if v else 0.0 for a, v in enumerate(r)])
    return np.array(out)


def test_c1_rca_oracle(report):
    rng = np.random.default_rng(1)
    worst, elapsed = 0.0, 0.0
    for _ in range(100):
        n, k = int(rng.integers(2, 51)), int(rng.integers(2, 201))
        dens = rng.uniform(0.1, 0.7)
        E = rng.integers(1, 100, size=(n, k)) * (rng.random((n, k)) < dens)
        E[:, 0] += 1
        E[0, :] += 1
        m = dense_activity(E)
        t0 = time.perf_counter()
        got = compute_rca(m).toarray()
        elapsed += time.perf_counter() - t0
        want = naive_rca(E)
        nz = want != 0
        worst = max(worst, float(np.max(np.abs(got[nz] - want[nz]) / want[nz])))
        assert np.array_equal(got == 0, ~nz)
    uniform = compute_rca(dense_activity(np.full((4, 7), 3))).toarray()
    ok = worst <= 1e-12 and np.array_equal(uniform, np.ones((4, 7))) and elapsed < 5
    report(1, ok, f"100 matrices, max rel err {worst:.2e} (<=1e-12), uniform all-ones {np.array_equal(uniform, np.ones((4, 7)))}, compute_rca {elapsed:.2f}s (<5s)")


# --- 2. ECI agreement ----------------------------------------------------------------


def test_c2_eci_agreement(report):
    t0 = time.perf_counter()
    worst_corr, worst_std = 1.0, 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        m = random_advantage(rng, int(rng.integers(10, 31)), int(rng.integers(30, 81)), rng.uniform(0.25, 0.5))
        assert len(m.languages) >= 10
        a, b = eci_reflections(m), eci_eigen(m)
        worst_corr = min(worst_corr, abs(float(np.corrcoef(a.eci, b.eci)[0, 1])))
        for v in (a.eci, b.eci, a.pci, b.pci):
            worst_std = max(worst_std, abs(float(v.mean())), abs(float(v.var()) - 1))
    closed = eci_eigen(advantage_from_dense([[1, 1], [0, 1]])).eci.tolist()
    elapsed = time.perf_counter() - t0
    ok = worst_corr >= 0.99 and worst_std <= 1e-9 and closed == [1.0, -1.0] and elapsed < 10
    report(2, ok, f"50 matrices, min |r| {worst_corr:.6f} (>=0.99), standardization dev {worst_std:.1e} (<=1e-9), 2x2 -> {closed}, {elapsed:.2f}s (<10s)")


# --- 3. proximity and density ----------------------------------------------------------


def brute_phi(M):
    k = M.shape[1]
    out = np.eye(k)
    for a in range(k):
        for b in range(k):
            if a != b:
                both = sum(1 for l in range(M.shape[0]) if M[l, a] and M[l, b])
                out[a, b] = both / max(M[:, a].sum(), M[:, b].sum())
    return out


def test_c3_proximity_density(report):
    worst, bounded = 0.0, True
    for seed in range(20):
        m = random_advantage(np.random.default_rng(2000 + seed), 12, 30, 0.35)
        phi = proximity(m)
        dense = phi.values.toarray()
        worst = max(worst, float(np.max(np.abs(dense - brute_phi(m.toarray())))))
        omega = density_matrix(m, phi)
        bounded &= bool(np.array_equal(dense, dense.T) and dense.min() >= 0 and dense.max() <= 1)
        bounded &= bool(omega.min() >= 0 and omega.max() <= 1)
    full = advantage_from_dense([[1, 1, 1], [1, 0, 0]])
    all_adv = density_matrix(full, proximity(full))[0].tolist()
    empty = AdvantageMatrix(["l0", "l1"], ["a0", "a1"], np.array([[1, 1], [0, 0]]))
    no_adv = density_matrix(empty, proximity(empty))[1].tolist()
    ok = worst == 0.0 and bounded and all_adv == [1.0, 1.0, 1.0] and no_adv == [0.0, 0.0]
    report(3, ok, f"20 matrices, max |phi - oracle| {worst:.1e}, symmetric and bounded {bounded}, all-advantage omega {all_adv}, no-advantage omega {no_adv}")


# --- 4. prediction harness ---------------------------------------------------------------


def planted_corpus(seed, n_lang=30, n_art=60):
    """Two years on a circle; second-year first edits land on the top decile of density."""
    rng = np.random.default_rng(seed)
    tl = rng.uniform(0, 2 * np.pi, n_lang)
    ta = rng.uniform(0, 2 * np.pi, n_art)
    lam = 0.5 * np.exp(3 * np.cos(tl[:, None] - ta[None, :]))
    langs = [f"l{i:02d}" for i in range(n_lang)]
    arts = [f"a{j:02d}" for j in range(n_art)]
    train = rng.poisson(lam)
    train[:, 0] += (train.sum(1) == 0)
    train[0, :] += (train.sum(0) == 0)
    m_train = ActivityMatrix(langs, arts, train)
    adv = binarize(compute_rca(m_train))
    omega = density_matrix(adv, proximity(adv))
    li = [langs.index(l) for l in adv.languages]
    aj = [arts.index(a) for a in adv.articles]
    target = np.zeros_like(train)
    sub_train = train[np.ix_(li, aj)]
    at_risk = (adv.toarray() == 0) & (sub_train == 0)
    cut = np.quantile(omega[at_risk], 0.9)
    for r, c in zip(*np.nonzero(at_risk & (omega >= cut))):
        target[li[r], aj[c]] = 3
    edited = train > 0
    target[edited] += rng.poisson(0.2 * lam[edited])
    return {2014: m_train, 2015: ActivityMatrix(langs, arts, target)}


def brute_auc(scores, labels):
    s = np.asarray(scores, float)
    y = np.asarray(labels)
    pos, neg = s[y == 1], s[y == 0]
    diff = pos[:, None] - neg[None, :]
    return ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (pos.size * neg.size)


def test_c4_prediction_harness(report):
    aucs, controls, inside = [], [], True
    for seed in range(4):
        run = predict_creation(planted_corpus(seed), 2015)
        aucs.append(run.auc)
        feats = np.array([f for _, f, _ in run.candidates])
        labels = np.array([y for _, _, y in run.candidates])
        shuffled = np.random.default_rng(seed).permutation(labels)
        c = auc(feats, shuffled)
        se = auc_null_se(int(shuffled.sum()), int(shuffled.size - shuffled.sum()))
        controls.append(c)
        inside &= abs(c - 0.5) <= 3 * se
    rng = np.random.default_rng(4)
    exact = True
    for n in (2, 10, 57, 300, 1000):
        s = rng.integers(0, 20, n) / 4
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        exact &= auc(s, y) == brute_auc(s, y)
    ok = min(aucs) >= 0.95 and inside and exact
    report(4, ok, f"planted AUC min {min(aucs):.4f} (>=0.95) over 4 seeds, shuffled controls {[round(c, 3) for c in controls]} within 0.5+-3SE {inside}, AUC == pair counting {exact}")


# --- 5. logistic fit -----------------------------------------------------------------------


def test_c5_logistic_gradient(report):
    worst = 0.0
    h = 1e-5
    for seed in range(20):
        rng = np.random.default_rng(3000 + seed)
        n = int(rng.integers(50, 400))
        x = rng.random(n)
        b0, b1 = rng.normal(-1, 1), rng.normal(2, 1)
        y = (rng.random(n) < 1 / (1 + np.exp(-(b0 + b1 * x)))).astype(int)
        y[:2] = [0, 1]
        fit = fit_logistic(x, y)
        beta = np.array([fit.intercept, fit.slope])
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            g = (log_likelihood(beta + e, x, y) - log_likelihood(beta - e, x, y)) / (2 * h)
            worst = max(worst, abs(g))
    report(5, worst < 1e-6, f"20 datasets, max |grad| at optimum {worst:.2e} (<1e-6)")


# --- 6. similarity --------------------------------------------------------------------------


def naive_cosine(X):
    n = X.shape[0]
    return np.array([[X[i] @ X[j] / math.sqrt((X[i] @ X[i]) * (X[j] @ X[j])) for j in range(n)] for i in range(n)])


def naive_log_pearson(R):
    n = R.shape[0]
    out = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(n):
            mask = (R[i] > 0) & (R[j] > 0)
            if mask.sum() >= 3:
                x, y = np.log(R[i, mask]), np.log(R[j, mask])
                if x.std() > 0 and y.std() > 0:
                    out[i, j] = np.corrcoef(x, y)[0, 1]
    return out


def test_c6_similarity(report):
    worst, props = 0.0, True
    for seed in range(20):
        rng = np.random.default_rng(4000 + seed)
        E = rng.integers(1, 30, size=(8, 25)) * (rng.random((8, 25)) < 0.6)
        E[:, 0] += 1
        E[0, :] += 1
        cos = portfolio_cosine(dense_activity(E)).values
        R = compute_rca(dense_activity(E))
        lp = log_rca_pearson(R).values
        want = naive_log_pearson(R.toarray())
        off = ~np.eye(8, dtype=bool)
        worst = max(worst, float(np.max(np.abs(cos - naive_cosine(E.astype(float))))))
        same_nan = np.array_equal(np.isnan(lp[off]), np.isnan(want[off]))
        props &= same_nan
        finite = off & ~np.isnan(want)
        if finite.any():
            worst = max(worst, float(np.max(np.abs(lp[finite] - want[finite]))))
        for v in (cos, lp):
            f = v[~np.isnan(v)]
            props &= bool(np.allclose(v, v.T, atol=0, equal_nan=True) and f.min() >= -1 and f.max() <= 1)
    disjoint = portfolio_cosine(dense_activity([[3, 0], [0, 5]])).values[0, 1]
    affine = float(log_rca_pearson(RcaMatrix(["a", "b"], ["x", "y", "z"], np.array([[1.0, 2.0, 4.0], [3.0, 6.0, 12.0]]))).values[0, 1])
    ok = worst <= 1e-12 and props and disjoint == 0.0 and abs(affine - 1) <= 1e-12
    report(6, ok, f"20 matrices, max oracle err {worst:.1e} (<=1e-12), symmetric and bounded {props}, disjoint cosine {disjoint}, affine log-RCA r {affine!r}")


# --- 7. geo ---------------------------------------------------------------------------------


def test_c7_geo(report):
    rng = np.random.default_rng(5)
    countries = ["AT", "BR", "CH", "DE", "FR", "JP", "US", "IN"]
    langs = ["de", "en", "es", "fr", "ja", "pt"]
    worst, shift_err = 0.0, 0.0
    for _ in range(50):
        rows = [(c, l, float(rng.integers(1, 10**6))) for c in countries for l in langs if rng.random() < 0.6]
        w = build_weights(rows)
        worst = max(worst, max(abs(math.fsum(r.values()) - 1) for r in w.weights.values()))
        eci = {l: float(rng.normal()) for l in langs}
        k = float(rng.normal(0, 3))
        a = weighted_eci(w, eci).values
        b = weighted_eci(w, {l: v + k for l, v in eci.items()}).values
        shift_err = max(shift_err, max(abs(b[c].value - a[c].value - k) for c in a))
    single = weighted_eci(build_weights([("DE", "de", 42)]), {"de": 0.37, "en": 1.0}).values["DE"].value
    restricted = weighted_eci(build_weights([("CH", "de", 60), ("CH", "rm", 40)]), {"de": 0.75}).values["CH"]
    ok = worst <= 1e-9 and single == 0.37 and shift_err <= 1e-9 and restricted.coverage == 0.6 and restricted.value == 0.75
    report(7, ok, f"50 weight sets, max |row sum - 1| {worst:.1e}, single-language value {single}, shift error {shift_err:.1e}, restrict (0.6, 0.4) -> coverage {restricted.coverage} value {restricted.value}")


# --- 8. inequality and behavior ---------------------------------------------------------------


def test_c8_inequality(report):
    g_equal = lorenz_gini([5, 5, 5, 5]).gini
    g_hand = lorenz_gini([1, 1, 1, 10]).gini
    z = two_proportion_ztest(30, 100, 10, 100)
    ref = 2 * norm.sf(abs(z.z))
    fpr = null_false_positive_rate(10_000, seed=0)
    ok = g_equal == 0.0 and abs(g_hand - 27 / 52) < 1e-15 and abs(z.p - ref) <= 1e-5 and abs(z.p - 4e-4) < 1e-4 and abs(fpr - 0.01) <= 0.005
    report(8, ok, f"gini equal {g_equal}, (1,1,1,10) {g_hand:.6f} vs 27/52, z {z.z:.4f} p {z.p:.3e} vs reference {ref:.3e}, null FPR {fpr:.4f} over 10000 trials (0.01+-0.005)")


# --- 9. ingestion -------------------------------------------------------------------------


@pytest.fixture
def no_network(monkeypatch):
    def refuse(*args, **kwargs):
        raise AssertionError("live network access attempted")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


def _harvest(cache_dir, clock):
    client = ApiClient(FixtureTransport(INGEST_FIXTURES), cache_dir, RateLimiter(50, clock=clock), clock=clock)
    genre = resolve_genre_articles(GenreSpec("cooking", {"en": ["Cooking techniques"]}, 0), client)
    revisions = fetch_revisions(client, "en", "Bread", article_id="Q7802", salt="x")
    views = fetch_pageviews_by_country(client, 2016, ["en.wikipedia", "de.wikipedia"], [1])
    return client, genre, revisions, views


def _window_max(grants, window=60.0):
    j, best = 0, 0
    for i, t in enumerate(grants):
        while grants[j] <= t - window:
            j += 1
        best = max(best, i - j + 1)
    return best


def test_c9_ingestion(report, tmp_path, no_network):
    blobs = []
    for run in range(2):
        clock = FakeClock()
        client, genre, revisions, views = _harvest(tmp_path / f"cache{run}", clock)
        write_events(tmp_path / f"e{run}.tsv", revisions.events)
        write_views(tmp_path / f"v{run}.csv", views.rows)
        (tmp_path / f"g{run}.txt").write_text("".join(f"{a.qid}\t{a.language}\t{a.title}\n" for a in genre.articles))
        blobs.append(b"".join((tmp_path / f"{p}{run}.{x}").read_bytes() for p, x in (("e", "tsv"), ("v", "csv"), ("g", "txt"))))
        peak = _window_max(client.limiter.grants)
        gaps = np.diff(client.limiter.grants)
    replay = blobs[0] == blobs[1] and len(revisions.events) == 501 and len(genre.articles) == 5 and len(views.rows) == 5
    rerun, _, _, _ = _harvest(tmp_path / "cache1", FakeClock())
    # sustained load: 4 threads, 300 requests through one limiter
    limiter = RateLimiter(50, clock=FakeClock())
    workers = [threading.Thread(target=lambda: [limiter.acquire() for _ in range(75)]) for _ in range(4)]
    for t in workers:
        t.start()
    for t in workers:
        t.join()
    stress = _window_max(limiter.grants)
    ok = replay and peak <= 50 and stress <= 50 and gaps.min() >= 1.2 - 1e-9 and rerun.requests == 0
    report(9, ok, f"3 operations replayed byte-identically {replay} with sockets blocked, peak per 60s {peak} (harvest) and {stress} (300 threaded requests) (<=50), min gap {gaps.min():.2f}s, rerun requests {rerun.requests}")


# --- 10. end to end ---------------------------------------------------------------------------


def test_c10_end_to_end(report, tmp_path):
    runs, times = [], []
    for i in range(2):
        d = tmp_path / f"run{i}"
        shutil.copytree(bundled_dir(), d)
        t0 = time.perf_counter()
        res = run_pipeline(PipelineConfig.load(d / "pipeline.json"))
        times.append(time.perf_counter() - t0)
        out = d / "out"
        runs.append((res, {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}))
    (r0, f0), (r1, f1) = runs
    identical = f0 == f1
    missing = [k for k in ARTIFACT_CLASSES if not r0.manifest["artifacts"][k]]
    n_events = sum(1 for _ in open(bundled_dir() / "events.tsv")) - 1
    ok = r0.ok and r1.ok and identical and not missing and max(times) < 10
    report(10, ok, f"{n_events} events, {len(r0.executed)} stages in {max(times):.2f}s (<10s), {len(f0)} files byte-identical {identical}, missing artifact classes {missing or 'none'}")
