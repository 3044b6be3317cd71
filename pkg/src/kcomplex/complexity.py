"""Diversity, ubiquity, ECI and PCI.

Two routes compute the same scores:

* ``eci_eigen`` solves the language-language operator
  ``Mt[l, l'] = sum_a M[l,a] M[l',a] / (k_l k_a)`` directly and takes the
  eigenvector of its second-largest eigenvalue.
* ``eci_reflections`` iterates the alternating averages from
  (diversity, ubiquity), which is power iteration on the same operator.

Both standardize to mean 0 / population variance 1 and flip the sign so
that ECI correlates nonnegatively with diversity. PCI is oriented so that
it correlates nonnegatively with the mean ECI of the languages holding
each article.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from kcomplex import _io
from kcomplex.errors import DegenerateSpectrumError, ParseError, PreconditionError
from kcomplex.rca import AdvantageMatrix

TIE_VARIANCE = 1e-15
DEGENERACY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ComplexityScores:
    languages: tuple[str, ...]
    articles: tuple[str, ...]
    eci: np.ndarray
    pci: np.ndarray
    diversity: np.ndarray
    ubiquity: np.ndarray
    method: str
    iterations: int | None
    converged: bool
    provenance: str
    eigenvalues: tuple[float, ...] = ()

    def eci_of(self, language) -> float:
        return float(self.eci[self.languages.index(language)])

    def eci_map(self) -> dict[str, float]:
        return {l: float(v) for l, v in zip(self.languages, self.eci)}

    def pci_map(self) -> dict[str, float]:
        return {a: float(v) for a, v in zip(self.articles, self.pci)}

    def manifest(self) -> dict:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "converged": self.converged,
            "provenance": self.provenance,
            "n_languages": len(self.languages),
            "n_articles": len(self.articles),
            "eigenvalues": [float(v) for v in self.eigenvalues],
        }


def standardize(x) -> np.ndarray:
    """Mean 0, population variance 1; all zeros when the input is flat."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    if var < TIE_VARIANCE:
        return np.zeros_like(x)
    return (x - mu) / np.sqrt(var)


def _pearson(x, y) -> float:
    x = np.asarray(x, float) - np.mean(x)
    y = np.asarray(y, float) - np.mean(y)
    den = np.sqrt((x * x).sum() * (y * y).sum())
    return float((x * y).sum() / den) if den > 0 else 0.0


def _orient(v, reference) -> np.ndarray:
    """Flip ``v`` so corr(v, reference) >= 0.

    When the correlation is exactly zero the largest-magnitude entry
    (first one on ties) is made positive, so the result never depends on
    what sign the solver happened to return.
    """
    if not v.any():
        return v
    r = _pearson(v, reference)
    if r < 0:
        return -v
    if r > 0:
        return v
    return v if v[int(np.argmax(np.abs(v)))] > 0 else -v


def diversity_ubiquity(m: AdvantageMatrix) -> tuple[np.ndarray, np.ndarray]:
    vals = m.values
    if vals.shape[0] == 0 or vals.shape[1] == 0:
        raise PreconditionError("advantage matrix is empty")
    diversity = np.asarray(vals.sum(axis=1)).ravel().astype(np.int64)
    ubiquity = np.asarray(vals.sum(axis=0)).ravel().astype(np.int64)
    if (diversity < 1).any():
        bad = [m.languages[i] for i in np.flatnonzero(diversity < 1)]
        raise PreconditionError(f"languages with zero diversity (prune first): {bad}")
    if (ubiquity < 1).any():
        bad = [m.articles[j] for j in np.flatnonzero(ubiquity < 1)]
        raise PreconditionError(f"articles with zero ubiquity (prune first): {bad}")
    return diversity, ubiquity


def _float_matrix(m: AdvantageMatrix) -> sp.csr_matrix:
    return m.values.astype(np.float64)


def _finish(m, eci_raw, pci_raw, diversity, ubiquity, method, iterations, converged, eigenvalues=()):
    M = _float_matrix(m)
    eci = _orient(standardize(eci_raw), diversity)
    pci = standardize(pci_raw)
    # article-side average of ECI fixes the PCI sign consistently with ECI
    pci = _orient(pci, (M.T @ eci) / ubiquity) if eci.any() else _orient(pci, -ubiquity)
    return ComplexityScores(
        languages=m.languages,
        articles=m.articles,
        eci=eci,
        pci=pci,
        diversity=diversity,
        ubiquity=ubiquity,
        method=method,
        iterations=iterations,
        converged=converged,
        provenance=m.digest(),
        eigenvalues=tuple(eigenvalues),
    )


def eci_reflections(m: AdvantageMatrix, iterations: int = 200, tolerance: float = 1e-10) -> ComplexityScores:
    """Method of reflections.

    ``iterations`` bounds the number of single reflection steps; steps are
    taken in pairs so the language vector is always an even-order one.
    Vectors are re-standardized after every pair, which leaves their
    direction unchanged (the averaging operators preserve constants) but
    keeps the shrinking differences above round-off.
    """
    if iterations < 1:
        raise PreconditionError("iterations must be >= 1")
    diversity, ubiquity = diversity_ubiquity(m)
    M = _float_matrix(m)
    kl = diversity.astype(np.float64)
    ka = ubiquity.astype(np.float64)
    prev = standardize(kl)
    pairs = max(1, iterations // 2)
    converged = False
    done = 0
    for _ in range(pairs):
        kl1 = (M @ ka) / diversity
        ka1 = (M.T @ kl) / ubiquity
        kl = standardize((M @ ka1) / diversity)
        ka = standardize((M.T @ kl1) / ubiquity)
        done += 2
        if np.max(np.abs(kl - prev)) < tolerance:
            converged = True
            break
        prev = kl
    return _finish(m, kl, ka, diversity, ubiquity, "reflections", done, converged)


def language_operator(m: AdvantageMatrix) -> np.ndarray:
    """Dense ``Mt[l, l'] = (1/k_l) sum_a M[l,a] M[l',a] / k_a``."""
    diversity, ubiquity = diversity_ubiquity(m)
    M = _float_matrix(m)
    inner = (M @ sp.diags(1.0 / ubiquity) @ M.T).toarray()
    return inner / diversity[:, None]


def eci_eigen(m: AdvantageMatrix) -> ComplexityScores:
    """ECI from the second eigenvector of the language operator.

    The operator is similar to the symmetric PSD matrix
    ``D^-1/2 M K^-1 M' D^-1/2``; that form is solved with ``eigh`` and
    mapped back, which keeps the spectrum real and the solve deterministic.
    """
    diversity, ubiquity = diversity_ubiquity(m)
    if m.shape[0] < 2 or m.shape[1] < 2:
        raise PreconditionError("eigenvector ECI needs at least 2 languages and 2 articles")
    M = _float_matrix(m)
    inner = (M @ sp.diags(1.0 / ubiquity) @ M.T).toarray()
    s = 1.0 / np.sqrt(diversity)
    sym = inner * s[:, None] * s[None, :]
    sym = (sym + sym.T) / 2
    w, u = np.linalg.eigh(sym)
    order = np.argsort(-w, kind="stable")
    w, u = w[order], u[:, order]
    if w[0] - w[-1] < DEGENERACY_TOL:
        # operator is a multiple of the identity: no language is distinguishable
        zeros_l = np.zeros(len(diversity))
        zeros_a = np.zeros(len(ubiquity))
        return _finish(m, zeros_l, zeros_a, diversity, ubiquity, "eigenvector", None, True, w)
    if w[0] - w[1] < DEGENERACY_TOL or (len(w) > 2 and w[1] - w[2] < DEGENERACY_TOL):
        raise DegenerateSpectrumError(w)
    v = u[:, 1] * s
    pci_raw = (M.T @ v) / ubiquity
    return _finish(m, v, pci_raw, diversity, ubiquity, "eigenvector", None, True, w)


def compute_complexity(m: AdvantageMatrix, method: str = "eigenvector", iterations: int = 200, tolerance: float = 1e-10):
    if method == "eigenvector":
        return eci_eigen(m)
    if method == "reflections":
        return eci_reflections(m, iterations, tolerance)
    raise PreconditionError(f"unknown complexity method {method!r}")


def rank_articles_by_pci(scores: ComplexityScores, top_n: int) -> list[tuple[str, float]]:
    if top_n < 1:
        raise PreconditionError("top_n must be >= 1")
    order = sorted(range(len(scores.articles)), key=lambda j: (-scores.pci[j], scores.articles[j]))
    return [(scores.articles[j], float(scores.pci[j])) for j in order[:top_n]]


def write_scores(scores: ComplexityScores, eci_path, pci_path, manifest_path=None) -> None:
    _io.write_csv(
        eci_path,
        ("language", "eci", "diversity"),
        zip(scores.languages, scores.eci.tolist(), scores.diversity.tolist()),
    )
    _io.write_csv(
        pci_path,
        ("article", "pci", "ubiquity"),
        zip(scores.articles, scores.pci.tolist(), scores.ubiquity.tolist()),
    )
    if manifest_path is not None:
        _io.write_json(manifest_path, scores.manifest())


def read_eci(path) -> dict[str, float]:
    """``language,eci,diversity`` CSV back to a language -> ECI mapping."""
    out, problems = {}, []
    for line, row in _io.read_csv_rows(path, ("language", "eci", "diversity")):
        try:
            out[row[0]] = float(row[1])
        except (ValueError, IndexError):
            problems.append((line, f"bad eci row {row!r}"))
    if problems:
        raise ParseError(path, problems)
    return out
