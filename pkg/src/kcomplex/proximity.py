"""Article proximity, relatedness density and the article-creation prediction harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from scipy.stats import rankdata

from kcomplex import _io
from kcomplex.errors import EmptyMatrixError, PreconditionError, SingleClassError
from kcomplex.matrix import ActivityMatrix, merge
from kcomplex.rca import AdvantageMatrix, binarize, compute_rca

MAX_NEWTON_ITER = 100
LOGLIK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ProximityMatrix:
    articles: tuple[str, ...]
    values: sp.csr_matrix  # symmetric, unit diagonal

    def get(self, a, b) -> float:
        return float(self.values[self.articles.index(a), self.articles.index(b)])

    def triplets(self):
        coo = self.values.tocoo()
        for i, j, v in zip(coo.row, coo.col, coo.data):
            yield self.articles[i], self.articles[j], float(v)


def proximity(m: AdvantageMatrix) -> ProximityMatrix:
    """phi[a, b] = (number of languages advantaged in both) / max(ubiquity_a, ubiquity_b)."""
    M = m.values.astype(np.float64).tocsc()
    ubiquity = np.asarray(M.sum(axis=0)).ravel()
    if (ubiquity == 0).any():
        raise PreconditionError("advantage matrix has articles with zero ubiquity; prune first")
    co = (M.T @ M).tocoo()
    data = co.data / np.maximum(ubiquity[co.row], ubiquity[co.col])
    phi = sp.csr_matrix((data, (co.row, co.col)), shape=(M.shape[1], M.shape[1]))
    phi.setdiag(1.0)
    phi = sp.csr_matrix(phi)
    phi.sort_indices()
    return ProximityMatrix(m.articles, phi)


def density_matrix(m: AdvantageMatrix, phi: ProximityMatrix) -> np.ndarray:
    """Dense omega[l, a] for every language/article pair of ``m``.

    omega[l, a] = sum_{b != a} M[l,b] phi[b,a] / sum_{b != a} phi[b,a];
    an article with no proximate neighbours gets 0.
    """
    if tuple(phi.articles) != tuple(m.articles):
        raise PreconditionError("proximity and advantage matrices index different articles")
    M = m.values.astype(np.float64)
    P = phi.values
    num = (M @ P).toarray() - M.toarray() * P.diagonal()[None, :]
    den = np.asarray(P.sum(axis=0)).ravel() - P.diagonal()
    out = np.zeros_like(num)
    ok = den > 0
    out[:, ok] = num[:, ok] / den[ok]
    return np.clip(out, 0.0, 1.0)


def relatedness_density(m: AdvantageMatrix, phi: ProximityMatrix, language, article) -> float:
    l = m.language_index(language)
    a = m.article_index(article)
    col = phi.values[:, a].toarray().ravel()
    col[a] = 0.0
    den = col.sum()
    if den <= 0:
        return 0.0
    row = m.values[l].toarray().ravel().astype(np.float64)
    return float(min(1.0, max(0.0, (row @ col) / den)))


@dataclass(frozen=True)
class LogisticFit:
    intercept: float
    slope: float
    iterations: int
    converged: bool
    separated: bool
    loglik: float

    def decision(self, x) -> np.ndarray:
        """Linear predictor; monotone in the probability, never saturates."""
        return self.intercept + self.slope * np.asarray(x, dtype=np.float64)

    def predict_proba(self, x) -> np.ndarray:
        return expit(self.decision(x))


def log_likelihood(params, x, y, l2: float = 0.0) -> float:
    eta = params[0] + params[1] * np.asarray(x, float)
    ll = float(np.sum(np.asarray(y, float) * eta - np.logaddexp(0.0, eta)))
    return ll - 0.5 * l2 * params[1] ** 2


def _check_labels(labels):
    y = np.asarray(labels)
    if y.size == 0 or not np.isin(y, (0, 1)).all():
        raise PreconditionError("labels must be a non-empty sequence of 0/1")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise SingleClassError("both classes are required")
    return y.astype(np.float64)


def is_separated(x, y) -> bool:
    """True when a threshold on the single feature splits the classes (ties allowed)."""
    pos, neg = x[y == 1], x[y == 0]
    return bool(pos.min() >= neg.max() or pos.max() <= neg.min())


def fit_logistic(features, labels, l2: float = 0.0) -> LogisticFit:
    """Maximum-likelihood logistic regression on one feature plus intercept.

    Newton-Raphson from zero; stops once the log-likelihood gains less than
    1e-10. Separable data has no finite optimum: the iteration then runs to
    the cap (or until the Hessian underflows) and ``separated`` is set.
    ``l2`` penalizes the slope only.
    """
    y = _check_labels(labels)
    x = np.asarray(features, dtype=np.float64)
    if x.shape != y.shape:
        raise PreconditionError("features and labels differ in length")
    if not np.isfinite(x).all():
        raise PreconditionError("features must be finite")
    separated = bool(l2 == 0 and is_separated(x, y))
    X = np.column_stack([np.ones_like(x), x])
    beta = np.zeros(2)
    ll = log_likelihood(beta, x, y, l2)
    penalty = np.diag([0.0, l2])
    converged = False
    it = 0
    for it in range(1, MAX_NEWTON_ITER + 1):
        p = expit(X @ beta)
        grad = X.T @ (y - p) - penalty @ beta
        w = p * (1.0 - p)
        hess = (X * w[:, None]).T @ X + penalty
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        if not np.isfinite(step).all():
            break
        new_beta = beta + step
        new_ll = log_likelihood(new_beta, x, y, l2)
        # step halving keeps the ascent monotone far from the optimum
        halvings = 0
        while new_ll < ll and halvings < 30:
            step /= 2
            new_beta = beta + step
            new_ll = log_likelihood(new_beta, x, y, l2)
            halvings += 1
        gain = new_ll - ll
        beta, ll = new_beta, new_ll
        if not separated and gain < LOGLIK_TOL:
            converged = True
            break
    return LogisticFit(float(beta[0]), float(beta[1]), it, converged, separated, ll)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; ties between a positive and a negative count one half."""
    y = _check_labels(labels)
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != y.shape:
        raise PreconditionError("scores and labels differ in length")
    ranks = rankdata(s, method="average")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_null_se(n_pos: int, n_neg: int) -> float:
    """Standard error of the AUC under the no-signal hypothesis."""
    return math.sqrt((n_pos + n_neg + 1) / (12.0 * n_pos * n_neg))


@dataclass(frozen=True)
class PredictionRun:
    train_years: tuple[int, ...]
    target_year: int
    intercept: float | None = None
    slope: float | None = None
    auc: float | None = None
    n_pos: int = 0
    n_neg: int = 0
    separated: bool = False
    skipped: str | None = None
    candidates: list = field(default_factory=list, compare=False, repr=False)

    @property
    def is_skipped(self) -> bool:
        return self.skipped is not None


def _training_state(yearly, target_year, threshold):
    train_years = tuple(sorted(y for y in yearly if y < target_year))
    if not train_years:
        raise PreconditionError(f"no training year before {target_year}")
    train = merge(*(yearly[y] for y in train_years))
    adv = binarize(compute_rca(train), threshold)
    return train_years, train, adv


def predict_creation(
    yearly: dict[int, ActivityMatrix],
    target_year: int,
    threshold: float = 1.0,
    l2: float = 0.0,
    candidates: str = "unedited",
) -> PredictionRun:
    """Score relatedness density as a predictor of first edits in ``target_year``.

    Training uses the cumulative matrix of every year before the target.
    By default (``candidates="unedited"``) the at-risk pairs are those of
    the training index with M=0 that were never edited during training;
    ``"no_advantage"`` keeps every M=0 pair, including already-edited ones
    that can only ever be negatives. A candidate is positive when the
    language's first edit on the article falls in the target year. AUC is
    in-sample.
    """
    if candidates not in ("no_advantage", "unedited"):
        raise PreconditionError(f"unknown candidate rule {candidates!r}")
    train_years, train, adv = _training_state(yearly, target_year, threshold)
    phi = proximity(adv)
    omega = density_matrix(adv, phi)
    bits = adv.toarray()
    train_counts = np.zeros(bits.shape, dtype=np.int64)
    target_counts = np.zeros(bits.shape, dtype=np.int64)
    li = {l: i for i, l in enumerate(adv.languages)}
    ai = {a: j for j, a in enumerate(adv.articles)}
    for src, dst in ((train, train_counts), (yearly.get(target_year), target_counts)):
        if src is None:
            continue
        for lang, art, v in src.triplets():
            if lang in li and art in ai:
                dst[li[lang], ai[art]] += v
    cand = bits == 0
    if candidates == "unedited":
        cand &= train_counts == 0
    labels = (cand & (train_counts == 0) & (target_counts > 0))[cand].astype(np.int64)
    feats = omega[cand]
    rows, cols = np.nonzero(cand)
    pairs = [(adv.languages[i], adv.articles[j]) for i, j in zip(rows, cols)]
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    base = dict(train_years=train_years, target_year=target_year, n_pos=n_pos, n_neg=n_neg)
    if labels.size == 0:
        return PredictionRun(**base, skipped="no candidates")
    if n_pos == 0 or n_neg == 0:
        return PredictionRun(**base, skipped="single class")
    fit = fit_logistic(feats, labels, l2=l2)
    score = auc(fit.decision(feats), labels)
    return PredictionRun(
        **base,
        intercept=fit.intercept,
        slope=fit.slope,
        auc=score,
        separated=fit.separated,
        candidates=list(zip(pairs, feats.tolist(), labels.tolist())),
    )


def auc_series(yearly: dict[int, ActivityMatrix], **kwargs) -> list[PredictionRun]:
    """One run per year after the first; years that cannot be scored are marked skipped."""
    years = sorted(yearly)
    runs = []
    for y in years[1:]:
        try:
            runs.append(predict_creation(yearly, y, **kwargs))
        except (EmptyMatrixError, SingleClassError) as exc:
            runs.append(PredictionRun(tuple(t for t in years if t < y), y, skipped=str(exc)))
    return runs


AUC_HEADER = ("slice", "year", "auc", "n_pos", "n_neg", "separated")


def auc_rows(slice_label: str, runs):
    for r in runs:
        yield (slice_label, r.target_year, r.auc, r.n_pos, r.n_neg, r.separated if not r.is_skipped else "skipped")


def write_auc_series(path, series: dict[str, list[PredictionRun]]) -> None:
    rows = []
    for label in sorted(series):
        rows.extend(auc_rows(label, series[label]))
    _io.write_csv(path, AUC_HEADER, rows)


def write_proximity(path, phi: ProximityMatrix) -> None:
    _io.write_csv(path, ("article_a", "article_b", "phi"), phi.triplets())
