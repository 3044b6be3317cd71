"""Revealed comparative advantage and its binarization."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from kcomplex.errors import EmptyAdvantageError, EmptyMatrixError, PreconditionError
from kcomplex.matrix import ActivityMatrix, LabeledMatrix, PruneReport, prune

# products above this lose exactness in float64, fall back to plain ratios
_EXACT_LIMIT = 2**53


class RcaMatrix(LabeledMatrix):
    kind = "rca"
    value_name = "rca"
    dtype = np.float64


class AdvantageMatrix(LabeledMatrix):
    """Binary M[language, article]; stored entries are all 1."""

    kind = "advantage"
    value_name = "m"
    dtype = np.int64

    def dense(self) -> np.ndarray:
        return self.toarray().astype(np.float64)


def compute_rca(matrix: ActivityMatrix) -> RcaMatrix:
    """RCA[l, a] = (E[l,a] / sum_a' E[l,a']) / (sum_l' E[l',a] / sum E).

    Evaluated as E*T / (row*col) on integers so that a true ratio of one
    comes out as exactly 1.0.
    """
    if matrix.nnz == 0:
        raise EmptyMatrixError("RCA of an empty matrix")
    vals = matrix.values
    rows = np.asarray(vals.sum(axis=1, dtype=np.int64)).ravel()
    cols = np.asarray(vals.sum(axis=0, dtype=np.int64)).ravel()
    if (rows == 0).any() or (cols == 0).any():
        raise PreconditionError("activity matrix has all-zero rows or columns; prune first")
    total = int(rows.sum())
    coo = vals.tocoo()
    e = coo.data.astype(np.int64)
    r, c = rows[coo.row], cols[coo.col]
    if int(e.max()) * total < _EXACT_LIMIT and int(rows.max()) * int(cols.max()) < _EXACT_LIMIT:
        data = (e * total).astype(np.float64) / (r * c).astype(np.float64)
    else:
        data = (e / r) / (c / float(total))
    out = sp.csr_matrix((data, (coo.row, coo.col)), shape=vals.shape)
    return matrix.with_values(out, cls=RcaMatrix)


def binarize(rca: RcaMatrix, threshold: float = 1.0) -> AdvantageMatrix:
    """Set M=1 where RCA >= threshold, then drop rows/columns left empty.

    Dropped labels are appended to the matrix's prune report.
    """
    if not threshold > 0:
        raise PreconditionError("threshold must be > 0")
    coo = rca.values.tocoo()
    keep = coo.data >= threshold
    if not keep.any():
        raise EmptyAdvantageError(f"no RCA value reaches {threshold}")
    bits = sp.csr_matrix(
        (np.ones(int(keep.sum()), dtype=np.int64), (coo.row[keep], coo.col[keep])), shape=rca.shape
    )
    adv = rca.with_values(bits, cls=AdvantageMatrix)
    adv, _ = prune(adv, 1, 1)
    return adv


def advantage_from_dense(bits, languages=None, articles=None) -> AdvantageMatrix:
    """Wrap a dense 0/1 array; labels default to zero-padded positions."""
    bits = np.asarray(bits)
    if not np.isin(bits, (0, 1)).all():
        raise PreconditionError("advantage matrix must be binary")
    n, k = bits.shape
    w = max(len(str(n)), len(str(k)))
    languages = languages or [f"l{i:0{w}d}" for i in range(n)]
    articles = articles or [f"a{j:0{w}d}" for j in range(k)]
    return AdvantageMatrix(languages, articles, sp.csr_matrix(bits.astype(np.int64)), prune_report=PruneReport())
