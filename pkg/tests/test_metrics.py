import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import example_model, random_model
from mdcr.graph import mixing_matrix
from mdcr.ica import oracle_ica
from mdcr.matching import discover_shared, match_domains
from mdcr.metrics import (
    ENUMERATION_CAP,
    block_signed_permutation_fit,
    gaussian_shared_vs_private_pair,
    gaussian_counterexample,
    linear_extensions,
    merge_construction,
    model_blocks,
    pivoted_cholesky,
    score_A,
    score_B,
    score_B_bruteforce,
    signed_permutation_matrix,
    signed_permutations,
    swap_construction,
    with_error_specs,
)

# Frozen from an independent enumeration of explicit signed permutation matrices.
SCORE_B_SINGLE_ENTRY = 0.0035355339059327407  # delta = 0.01, beta = 8
SCORE_A_EMPTY_GRAPH = 0.016666666666666666  # delta = 0.05, ell = 3

B_4x2 = np.array([[1.0, 0.5], [-0.3, 2.0], [0.8, -1.2], [0.0, 0.7]])


def random_dag(rng, p, prob=0.5):
    """Edges i -> j with i < j under a random relabeling."""
    perm = rng.permutation(p)
    return [(int(perm[i]), int(perm[j])) for i in range(p) for j in range(i + 1, p) if rng.random() < prob]


def weights_on(rng, p, edges):
    A = np.zeros((p, p))
    for a, b in edges:
        A[b, a] = rng.uniform(0.25, 1) * rng.choice([-1, 1])
    return A


def test_signed_permutations_order_and_count():
    items = list(signed_permutations(2))
    assert len(items) == 8
    assert items[0] == ((0, 1), (-1, -1))
    assert items[-1] == ((1, 0), (1, 1))


def test_signed_permutation_matrix_convention():
    Q = signed_permutation_matrix((2, 0, 1), (1, -1, 1))
    M = np.arange(9.0).reshape(3, 3)
    R = Q.T @ M @ Q
    assert R[0, 1] == -M[2, 0]
    assert R[1, 2] == -M[0, 1]


def test_score_B_examples():
    assert score_B(B_4x2, B_4x2) == 0
    E = B_4x2.copy()
    E[0, 0] += 0.01
    assert score_B(E, B_4x2) == pytest.approx(SCORE_B_SINGLE_ENTRY, abs=1e-15)
    assert score_B_bruteforce(E, B_4x2) == pytest.approx(SCORE_B_SINGLE_ENTRY, abs=1e-15)


def test_score_B_cap():
    B = np.eye(ENUMERATION_CAP + 1)
    with pytest.raises(ValueError):
        score_B(B, B)
    assert score_B(B, B, approx=True) == 0


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 4))
def test_score_B_assignment_matches_enumeration(seed, ell, ell_hat):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((5, ell))
    B_hat = rng.standard_normal((5, ell_hat))
    assert score_B(B_hat, B) == pytest.approx(score_B_bruteforce(B_hat, B), abs=1e-12)


@pytest.mark.parametrize("ell", [1, 2, 3, 4])
def test_score_B_gauge_invariance(ell):
    B = np.random.default_rng(ell).standard_normal((6, ell))
    for perm, signs in signed_permutations(ell):
        assert score_B(B @ signed_permutation_matrix(perm, signs), B) == 0


def test_linear_extension_examples():
    assert len(linear_extensions(3, [])) == 6
    assert linear_extensions(3, [(0, 1), (1, 2)]) == [(0, 1, 2)]
    assert linear_extensions(3, [(0, 2), (1, 2)]) == [(0, 1, 2), (1, 0, 2)]
    with pytest.raises(ValueError):
        linear_extensions(2, [(0, 1), (1, 0)])


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_linear_extensions_match_filter(seed, p):
    edges = random_dag(np.random.default_rng(seed), p)
    brute = sorted(s for s in itertools.permutations(range(p)) if all(s[a] < s[b] for a, b in edges))
    assert linear_extensions(p, edges) == brute


def test_score_A_examples():
    A = np.zeros((3, 3))
    assert score_A(A, A, []) == 0
    A_hat = A.copy()
    A_hat[2, 0] = 0.05
    assert score_A(A_hat, A, []) == pytest.approx(SCORE_A_EMPTY_GRAPH, abs=1e-15)


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_score_A_gauge_invariance_exhaustive(p):
    rng = np.random.default_rng(p)
    for _ in range(3):
        edges = random_dag(rng, p)
        A = weights_on(rng, p, edges)
        for sigma in linear_extensions(p, edges):
            for signs in itertools.product((-1, 1), repeat=p):
                Q = signed_permutation_matrix(sigma, signs)
                assert score_A(Q @ A @ Q.T, A, edges) < 1e-15


@pytest.mark.parametrize("p", [2, 3, 4])
def test_score_A_zero_exactly_on_admissible_orbit(p):
    rng = np.random.default_rng(10 + p)
    edges = random_dag(rng, p, prob=0.7)
    A = weights_on(rng, p, edges)
    admissible = set(linear_extensions(p, edges))
    orbit = []
    for sigma in admissible:
        for signs in itertools.product((-1, 1), repeat=p):
            Q = signed_permutation_matrix(sigma, signs)
            orbit.append(Q @ A @ Q.T)
    for perm, signs in signed_permutations(p):
        Q = signed_permutation_matrix(perm, signs)
        A_hat = Q @ A @ Q.T
        in_orbit = any(np.array_equal(A_hat, O) for O in orbit)
        assert (score_A(A_hat, A, edges) == 0) == in_orbit


def test_score_A_argmin_and_unsigned():
    A = np.array([[0, 0], [0.5, 0]])
    A_hat = -A
    val, sigma, signs = score_A(A_hat, A, [(0, 1)], return_argmin=True)
    assert val == 0 and sigma == (0, 1) and signs[0] * signs[1] == -1
    assert score_A(A_hat, A, [(0, 1)], signed=False) == pytest.approx(1.0 / 2)


def test_gaussian_counterexample_identity():
    G = gaussian_counterexample(np.eye(3), np.eye(3))
    np.testing.assert_allclose(G @ G.T, np.eye(3), atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_gaussian_counterexample_rank_deficient(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((6, 3))
    Sigma = M @ M.T
    R = rng.standard_normal((3, 3))
    Xi = R @ R.T + 0.1 * np.eye(3)
    G = gaussian_counterexample(Sigma, Xi)
    assert np.linalg.norm(G @ Xi @ G.T - Sigma) < 1e-10 * np.linalg.norm(Sigma)


def test_gaussian_counterexample_errors():
    with pytest.raises(ValueError, match="rank"):
        gaussian_counterexample(np.eye(3), np.eye(2))
    with pytest.raises(ValueError, match="positive definite"):
        gaussian_counterexample(np.eye(2), -np.eye(2))


def test_shared_and_unshared_gaussian_models_agree():
    rng = np.random.default_rng(0)
    R = rng.standard_normal((2, 2))
    for Xi in (None, R @ R.T + np.eye(2)):
        Sigmas, shared, private = gaussian_shared_vs_private_pair(rng, Xi=Xi)
        Xi_ = np.eye(2) if Xi is None else Xi
        for S, G in zip(Sigmas, private):
            assert np.linalg.norm(G @ Xi_ @ G.T - S) < 1e-10 * np.linalg.norm(S)


def lower_triangular(W):
    return not np.any(np.triu(W, 1))


@pytest.mark.parametrize("p", [1, 2, 3])
def test_lower_triangular_permutation_pairs(p):
    pairs = [(i, j) for i in range(p) for j in range(i + 1, p)]
    perms = list(itertools.permutations(range(p)))
    for mask in range(2 ** len(pairs)):
        edges = [e for k, e in enumerate(pairs) if mask >> k & 1]
        A = np.zeros((p, p))
        for a, b in edges:
            A[b, a] = 0.5
        M = np.linalg.inv(np.eye(p) - A)
        ext = set(linear_extensions(p, edges))
        for s1 in perms:
            for s2 in perms:
                inv2 = np.argsort(s2)
                W = M[np.ix_(s1, inv2)]
                expect = list(s2) == list(np.argsort(s1)) and tuple(s2) in ext
                assert lower_triangular(W) == expect


def test_block_fit_on_oracle_output(two_domain_model):
    B = mixing_matrix(two_domain_model)
    perm = [1, 0, 3, 2, 4]
    signs = np.array([1, -1, -1, 1, -1])
    assert block_signed_permutation_fit(B[:, perm] * signs, B, model_blocks(two_domain_model.graph)) is not None
    # mixing a shared with a private column is outside the gauge group
    assert block_signed_permutation_fit(B[:, [2, 1, 0, 3, 4]], B, model_blocks(two_domain_model.graph)) is None


def test_swap_twin_keeps_marginals_but_not_joint():
    model = example_model(2)
    B, B_twin = swap_construction(model, 0, 2, 0)
    g = model.graph
    rows = list(g.domain_observed(0))
    cols = g.domain_sources(0)
    assert sorted(map(tuple, B_twin[np.ix_(rows, cols)].T.round(12))) == sorted(map(tuple, B[np.ix_(rows, cols)].T.round(12)))
    assert block_signed_permutation_fit(B_twin, B, model_blocks(g)) is None


def test_merge_twin_is_indistinguishable_per_domain():
    model = None
    for seed in range(200):
        cand = random_model(seed)
        if min(cand.graph.domain_latent_sizes) >= 1:
            model = cand
            break
    g = model.graph
    private = [g.domain_latents(e)[0] for e in range(g.num_domains)]
    same_law = model.error_specs[private[0]]
    specs = list(model.error_specs)
    for u in private:
        specs[u] = same_law
    original = with_error_specs(model, specs)
    twin = merge_construction(original, private)
    assert twin.graph.num_shared == g.num_shared + 1
    found = []
    for m_ in (original, twin):
        results = [oracle_ica(m_, e) for e in range(g.num_domains)]
        for e, r in enumerate(results):
            cols = sorted(zip(map(tuple, r.B_hat.T.round(12)), (k for k, _ in r.labels)))
            found.append((e, cols))
        found.append(("ell_hat", len(discover_shared(match_domains(results)))))
    half = len(found) // 2
    assert found[:half] == found[half:]
    # both get the same answer, so it is wrong for the original model
    assert found[-1][1] == g.num_shared + 1


def test_merge_rejects_shared_nodes():
    model = example_model()
    with pytest.raises(ValueError):
        merge_construction(model, [0, 4])


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(0, 3))
def test_pivoted_cholesky_reveals_rank(seed, r, extra):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((r + extra, r))
    S = M @ M.T
    T, order = pivoted_cholesky(S)
    assert T.shape == (r + extra, r)
    assert not np.any(np.triu(T[order][:r], 1))
    np.testing.assert_allclose(T @ T.T, S, atol=1e-10 * np.linalg.norm(S))
