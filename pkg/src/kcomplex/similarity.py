"""Language-language similarity matrices and their table export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kcomplex import _io
from kcomplex.errors import PreconditionError
from kcomplex.matrix import LabeledMatrix
from kcomplex.rca import RcaMatrix

MIN_SUPPORT = 3


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    labels: tuple[str, ...]
    values: np.ndarray  # NaN marks an undefined pair
    kind: str
    support: np.ndarray

    def get(self, a, b) -> float:
        return float(self.values[self.labels.index(a), self.labels.index(b)])

    def reordered(self, order) -> "SimilarityMatrix":
        order = list(order)
        return SimilarityMatrix(
            tuple(self.labels[i] for i in order),
            self.values[np.ix_(order, order)],
            self.kind,
            self.support[np.ix_(order, order)],
        )


def portfolio_cosine(matrix: LabeledMatrix) -> SimilarityMatrix:
    """Cosine similarity between languages' rows (edit counts or RCA)."""
    X = matrix.values.astype(np.float64)
    norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    if (norms == 0).any():
        bad = [matrix.languages[i] for i in np.flatnonzero(norms == 0)]
        raise PreconditionError(f"zero-norm portfolio for {bad}")
    gram = (X @ X.T).toarray()
    vals = gram / np.outer(norms, norms)
    vals = np.clip((vals + vals.T) / 2, 0.0, 1.0)
    np.fill_diagonal(vals, 1.0)
    present = (X != 0).astype(np.int64)
    overlap = (present @ present.T).toarray()
    nz = np.diff(X.indptr)
    support = nz[:, None] + nz[None, :] - overlap
    return SimilarityMatrix(matrix.languages, vals, "portfolio_cosine", support)


def _pearson_or_nan(x, y) -> float:
    if len(x) < MIN_SUPPORT:
        return np.nan
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = (xc * xc).sum()
    syy = (yc * yc).sum()
    if sxx <= 0 or syy <= 0:
        return np.nan
    r = (xc * yc).sum() / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def log_rca_pearson(rca: RcaMatrix, epsilon: float | None = None) -> SimilarityMatrix:
    """Pearson correlation of ln RCA between every pair of languages.

    Without ``epsilon`` each pair uses only the articles where both RCA
    values are positive. With ``epsilon`` every article is used with
    ``ln(RCA + epsilon)``. Pairs with fewer than three supporting articles
    or a constant side are NaN.
    """
    dense = rca.toarray()
    n = dense.shape[0]
    vals = np.full((n, n), np.nan)
    support = np.zeros((n, n), dtype=np.int64)
    if epsilon is not None:
        if not epsilon > 0:
            raise PreconditionError("epsilon must be > 0")
        logs = np.log(dense + epsilon)
        pos = np.ones_like(dense, dtype=bool)
    else:
        pos = dense > 0
        with np.errstate(divide="ignore"):
            logs = np.where(pos, np.log(np.where(pos, dense, 1.0)), 0.0)
    for i in range(n):
        for j in range(i, n):
            mask = pos[i] & pos[j]
            support[i, j] = support[j, i] = int(mask.sum())
            r = _pearson_or_nan(logs[i, mask], logs[j, mask])
            if i == j and not np.isnan(r):
                r = 1.0
            vals[i, j] = vals[j, i] = r
    kind = "log_rca_pearson" if epsilon is None else "log_rca_pearson_eps"
    return SimilarityMatrix(rca.languages, vals, kind, support)


def seriation_order(sim: SimilarityMatrix) -> list[int]:
    """Leaf order of average-linkage clustering on ``1 - similarity``.

    Undefined similarities count as 0. Ties between candidate merges go to
    the pair whose smallest member positions come first, and a merged
    cluster lists the cluster holding the earlier label first, so the
    order is fully determined by the (lexicographic) input order.
    """
    n = len(sim.labels)
    if n <= 2:
        return list(range(n))
    dist = 1.0 - np.nan_to_num(sim.values, nan=0.0)
    clusters = {i: [i] for i in range(n)}
    while len(clusters) > 1:
        keys = sorted(clusters, key=lambda c: min(clusters[c]))
        best = None
        for ia, ca in enumerate(keys):
            for cb in keys[ia + 1:]:
                d = dist[np.ix_(clusters[ca], clusters[cb])].mean()
                cand = (d, min(clusters[ca]), min(clusters[cb]))
                if best is None or cand < best[0]:
                    best = (cand, ca, cb)
        _, ca, cb = best
        clusters[ca] = clusters[ca] + clusters.pop(cb)
    (leaves,) = clusters.values()
    return leaves


def write_similarity(sim: SimilarityMatrix, path, ordering: str = "input") -> list[str]:
    """Square CSV with labels on the first row/column, plus manifest and support CSV."""
    if ordering == "input":
        order = list(range(len(sim.labels)))
    elif ordering == "seriation":
        order = seriation_order(sim)
    else:
        raise PreconditionError(f"unknown ordering {ordering!r}")
    out = sim.reordered(order)
    header = ("language",) + out.labels
    _io.write_csv(path, header, ((lab, *row.tolist()) for lab, row in zip(out.labels, out.values)))
    path = Path(path)
    support_path = path.with_name(path.stem + "_support.csv")
    _io.write_csv(support_path, header, ((lab, *row.tolist()) for lab, row in zip(out.labels, out.support)))
    _io.write_json(
        _io.sidecar_path(path),
        {
            "kind": sim.kind,
            "ordering": ordering,
            "labels": list(out.labels),
            "support_path": support_path.name,
            "undefined_pairs": int(np.isnan(np.triu(out.values, 1) + np.tril(np.ones_like(out.values))).sum()),
        },
    )
    return list(out.labels)


def read_similarity(path) -> SimilarityMatrix:
    path = Path(path)
    rows = list(_io.read_csv_rows(path))
    manifest = _io.read_json(_io.sidecar_path(path)) if _io.sidecar_path(path).exists() else {}
    labels = tuple(r[0] for _, r in rows)
    vals = np.array([[float(c) if c else np.nan for c in r[1:]] for _, r in rows])
    return SimilarityMatrix(labels, vals, manifest.get("kind", "unknown"), np.zeros(vals.shape, dtype=np.int64))
