import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_advantage
from kcomplex.complexity import (
    ComplexityScores,
    compute_complexity,
    diversity_ubiquity,
    eci_eigen,
    eci_reflections,
    language_operator,
    rank_articles_by_pci,
    read_eci,
    standardize,
    write_scores,
)
from kcomplex.errors import DegenerateSpectrumError, PreconditionError
from kcomplex.rca import AdvantageMatrix, advantage_from_dense


def corr(a, b):
    return float(np.corrcoef(a, b)[0, 1])


def test_diversity_ubiquity_identity():
    d, u = diversity_ubiquity(advantage_from_dense(np.eye(2, dtype=int)))
    assert d.tolist() == [1, 1] and u.tolist() == [1, 1]


def test_diversity_ubiquity_hand():
    d, u = diversity_ubiquity(advantage_from_dense([[1, 1], [0, 1]]))
    assert d.tolist() == [2, 1] and u.tolist() == [1, 2]


def test_diversity_ubiquity_sum_oracle(rng):
    m = random_advantage(rng, 20, 50, 0.3)
    d, u = diversity_ubiquity(m)
    dense = m.toarray()
    assert np.array_equal(d, dense.sum(1)) and np.array_equal(u, dense.sum(0))


def test_unpruned_is_precondition_error():
    m = AdvantageMatrix(["a", "b"], ["x", "y"], np.array([[1, 0], [0, 0]]))
    with pytest.raises(PreconditionError):
        diversity_ubiquity(m)


def test_operator_two_by_two():
    np.testing.assert_allclose(language_operator(advantage_from_dense([[1, 1], [0, 1]])), [[0.75, 0.25], [0.5, 0.5]])


def test_eigen_two_by_two_closed_form():
    s = eci_eigen(advantage_from_dense([[1, 1], [0, 1]]))
    assert s.eci.tolist() == [1.0, -1.0]
    np.testing.assert_allclose(s.eigenvalues, [1.0, 0.25], atol=1e-15)
    # article a0 is only in the diverse language, so it is the more complex one
    assert s.pci.tolist() == [1.0, -1.0]


def test_reflections_two_by_two_closed_form():
    s = eci_reflections(advantage_from_dense([[1, 1], [0, 1]]))
    np.testing.assert_allclose(s.eci, [1.0, -1.0], atol=1e-12)
    assert s.converged


@pytest.mark.parametrize("k", [2, 3, 5])
def test_identity_gives_zeros(k):
    m = advantage_from_dense(np.eye(k, dtype=int))
    assert not eci_eigen(m).eci.any()
    assert not eci_reflections(m).eci.any()


def test_degenerate_spectrum_names_eigenvalues():
    # two disconnected 2x2 blocks: eigenvalue 1 twice
    bits = np.kron(np.eye(2, dtype=int), np.array([[1, 1], [0, 1]]))
    with pytest.raises(DegenerateSpectrumError) as err:
        eci_eigen(advantage_from_dense(bits))
    assert "1.0" in str(err.value) or "0.99" in str(err.value)


def test_eigen_needs_two_by_two():
    with pytest.raises(PreconditionError):
        eci_eigen(advantage_from_dense([[1, 1]]))


@pytest.mark.parametrize("seed", range(5))
def test_cross_method_agreement(seed):
    m = random_advantage(np.random.default_rng(seed), 15, 40, 0.4)
    a = eci_reflections(m)
    b = eci_eigen(m)
    assert abs(corr(a.eci, b.eci)) >= 0.99
    assert corr(a.eci, b.eci) > 0  # both oriented to diversity


@given(st.integers(0, 2**31), st.sampled_from(["eigenvector", "reflections"]))
@settings(max_examples=30, deadline=None)
def test_standardized_and_oriented(seed, method):
    m = random_advantage(np.random.default_rng(seed), 12, 30, 0.35)
    try:
        s = compute_complexity(m, method)
    except DegenerateSpectrumError:
        return
    for v in (s.eci, s.pci):
        if v.any():
            assert abs(v.mean()) < 1e-9 and abs(v.var() - 1) < 1e-9
    if s.eci.any():
        assert corr(s.eci, s.diversity) >= -1e-12


@given(st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    m = random_advantage(rng, 10, 25, 0.4)
    dense = m.toarray()
    perm = rng.permutation(dense.shape[0])
    langs = [m.languages[i] for i in perm]
    # same labels, rows presented in another order; canonical sort restores it
    m2 = AdvantageMatrix(langs, m.articles, dense[perm])
    try:
        a, b = eci_eigen(m), eci_eigen(m2)
    except DegenerateSpectrumError:
        return
    assert a.eci_map() == b.eci_map()


def test_bitwise_stable(rng):
    m = random_advantage(rng, 15, 40, 0.4)
    a, b = eci_eigen(m), eci_eigen(m)
    assert a.eci.tobytes() == b.eci.tobytes() and a.pci.tobytes() == b.pci.tobytes()


def test_non_convergence_is_flagged_not_raised(rng):
    m = random_advantage(rng, 15, 40, 0.4)
    s = eci_reflections(m, iterations=2, tolerance=1e-300)
    assert not s.converged and s.iterations == 2


def test_standardize_flat_is_zero():
    assert standardize([3, 3, 3]).tolist() == [0, 0, 0]


# --- ranking and IO -----------------------------------------------------------------


def _scores(pci, articles=None):
    n = len(pci)
    articles = articles or [f"a{i:02d}" for i in range(n)]
    z = np.zeros(2)
    return ComplexityScores(("l0", "l1"), tuple(articles), z, np.asarray(pci, float), z, np.ones(n), "eigenvector", None, True, "")


def test_top1_is_argmax():
    assert rank_articles_by_pci(_scores([0.1, 2.0, -1.0]), 1) == [("a01", 2.0)]


def test_ties_by_article_id():
    assert [a for a, _ in rank_articles_by_pci(_scores([1.0, 1.0], ["b", "a"]), 2)] == ["a", "b"]


def test_ranking_matches_sort_oracle(rng):
    pci = rng.normal(size=50)
    got = rank_articles_by_pci(_scores(pci), 20)
    want = sorted(((f"a{i:02d}", float(p)) for i, p in enumerate(pci)), key=lambda t: (-t[1], t[0]))[:20]
    assert got == want


def test_top_n_must_be_positive():
    with pytest.raises(PreconditionError):
        rank_articles_by_pci(_scores([1.0]), 0)


def test_scores_round_trip(tmp_path, rng):
    s = eci_eigen(random_advantage(rng, 8, 20, 0.4))
    write_scores(s, tmp_path / "eci.csv", tmp_path / "pci.csv", tmp_path / "eci.json")
    assert read_eci(tmp_path / "eci.csv") == s.eci_map()
    assert (tmp_path / "pci.csv").read_text().startswith("article,pci,ubiquity\n")
