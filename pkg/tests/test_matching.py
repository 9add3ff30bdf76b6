import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from conftest import random_model
from mdcr.graph import mixing_matrix
from mdcr.ica import IcaOptions, IcaResult, oracle_ica, run_domain_ica
from mdcr.matching import (
    MatchTable,
    assemble_joint,
    bonferroni_level,
    discover_shared,
    false_discovery_bound,
    kolmogorov_critical,
    kolmogorov_sf,
    ks_distance,
    ks_statistic,
    match_domains,
    omega,
    write_match_table,
)
from mdcr.metrics import block_signed_permutation_fit, model_blocks
from mdcr.synthesis import PRESETS, make_rng, sample_data, sample_model


def brute_force_ks(a, b):
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(1 for y in a if y <= x) / len(a)
        fb = sum(1 for y in b if y <= x) / len(b)
        best = max(best, abs(fa - fb))
    return best


samples = st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=12)


@given(samples, samples)
def test_ks_distance_matches_double_loop(a, b):
    assert ks_distance(a, b) == brute_force_ks(a, b)


@given(samples, samples, samples)
def test_ks_distance_is_a_metric(a, b, c):
    assert ks_distance(a, b) == ks_distance(b, a)
    assert ks_distance(a, c) <= ks_distance(a, b) + ks_distance(b, c) + 1e-12


def test_ks_distance_matches_scipy():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(300), rng.exponential(size=200)
    assert ks_distance(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-15)
    assert ks_statistic(a, b) == pytest.approx(math.sqrt(300 * 200 / 500) * ks_distance(a, b))


def test_kolmogorov_critical_matches_scipy():
    for alpha in (0.2, 0.05, 0.01, 1e-4):
        assert kolmogorov_critical(alpha) == pytest.approx(stats.kstwobign.isf(alpha), abs=1e-9)
    assert 1.3580 <= kolmogorov_critical(0.05) <= 1.3582
    assert kolmogorov_sf(0.0) == 1.0


def test_bonferroni_counts_both_signs():
    # t = 2 * (5 * 5) for two domains with five sources each
    assert bonferroni_level(0.05, [5, 5]) == pytest.approx(0.05 / 50)
    assert bonferroni_level(0.05, [2, 3, 4]) == pytest.approx(0.05 / (2 * (6 + 8 + 12)))
    with pytest.raises(ValueError):
        bonferroni_level(0.05, [3])


def test_false_discovery_bound_plug_in():
    c = 1.3580986393225511
    x = 0.1 - c / (math.sqrt(2) * 100)
    expected = 2 * math.exp(-2 * 10_000 * x * x)
    assert false_discovery_bound(10_000, 10_000, 0.2, c, 2) == pytest.approx(expected, rel=1e-12)
    assert false_discovery_bound(10_000, 10_000, 0.2, c, 3) == pytest.approx(expected**2, rel=1e-12)


def test_false_discovery_bound_clamps():
    assert false_discovery_bound(100, 100, 0.01, 1.36, 2) == 1.0
    assert false_discovery_bound(100, 100, 0.01, 1.36, 5) == 1.0
    with pytest.raises(ValueError):
        false_discovery_bound(100, 100, 0.2, 1.36, 1)


@given(st.integers(2, 6), st.floats(0.05, 0.5), st.integers(100, 10**5))
def test_false_discovery_bound_non_increasing(E, kappa, n):
    c = kolmogorov_critical(0.05)
    assert false_discovery_bound(n, n, kappa, c, E + 1) <= false_discovery_bound(n, n, kappa, c, E)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_omega_one_match_per_row_and_column(seed, r, c):
    rng = np.random.default_rng(seed)
    T = rng.integers(0, 4, (r, c)).astype(float)
    M = omega(T, 2.0)
    assert M.sum(axis=0).max(initial=0) <= 1
    assert M.sum(axis=1).max(initial=0) <= 1
    for i, j in zip(*np.nonzero(M)):
        assert T[i, j] <= 2.0
        assert T[i, j] == T[i].min() == T[:, j].min()


def test_omega_breaks_ties_by_lowest_index():
    T = np.zeros((2, 2))
    assert omega(T, 1.0).tolist() == [[True, False], [False, False]]


def test_example_oracle_matching(two_domain_model):
    rng = np.random.default_rng(0)
    results = [oracle_ica(two_domain_model, e, rng) for e in range(2)]
    table = match_domains(results)
    tuples = discover_shared(table)
    assert len(tuples) == 2
    asm = assemble_joint(results, tuples)
    assert asm.ell_hat == 2
    assert asm.B_hat.shape == (9, 5)
    fit = block_signed_permutation_fit(asm.B_hat, mixing_matrix(two_domain_model), model_blocks(two_domain_model.graph))
    assert fit is not None


def test_assembly_layout(two_domain_model):
    results = [oracle_ica(two_domain_model, e) for e in range(2)]
    asm = assemble_joint(results, discover_shared(match_domains(results)))
    # private block of domain 1 has no rows in domain 2 and vice versa
    assert np.all(asm.B_hat[4:, 2:4] == 0)
    assert np.all(asm.B_hat[:4, 4] == 0)
    assert asm.column_domain == [None, None, 0, 0, 1]


def test_empirical_matching_finds_shared_sources():
    model = sample_model(PRESETS["ell3_m2"], make_rng(4))
    data = sample_data(model, 25_000, make_rng(5))
    results = [run_domain_ica(x, IcaOptions(seed=e)) for e, x in enumerate(data.X)]
    tuples = discover_shared(match_domains(results))
    assert len(tuples) == 3
    for t in tuples:
        assert t.signs[0] == 1


def _table(sign01, sign02, sign12):
    ones = np.ones((1, 1), dtype=bool)
    T = {k: np.zeros((1, 1)) for k in [(0, 1), (0, 2), (1, 2)]}
    S = {(0, 1): np.array([[sign01]]), (0, 2): np.array([[sign02]]), (1, 2): np.array([[sign12]])}
    return MatchTable(T, S, {k: ones for k in T}, 1.0, 3)


def test_sign_inconsistent_tuples_are_rejected():
    assert len(discover_shared(_table(1, -1, -1))) == 1
    assert discover_shared(_table(1, -1, -1))[0].signs == (1, 1, -1)
    assert discover_shared(_table(1, 1, -1)) == []


def test_match_table_csv_is_one_based(tmp_path, two_domain_model):
    results = [oracle_ica(two_domain_model, e) for e in range(2)]
    table = match_domains(results)
    write_match_table(table, tmp_path / "m.csv")
    with open(tmp_path / "m.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 * 3
    assert {r["e"] for r in rows} == {"1"} and {r["f"] for r in rows} == {"2"}
    assert sum(r["matched"] == "1" for r in rows) == 2


def test_unknown_correction_raises(two_domain_model):
    rng = np.random.default_rng(0)
    res = [IcaResult(np.eye(2), rng.standard_normal((2, 50))) for _ in range(2)]
    with pytest.raises(ValueError):
        match_domains(res, correction="holm")


@given(st.integers(0, 10_000))
def test_oracle_pipeline_recovers_joint_mixing(seed):
    model = random_model(seed)
    rng = np.random.default_rng(seed)
    results = [oracle_ica(model, e, rng) for e in range(model.graph.num_domains)]
    asm = assemble_joint(results, discover_shared(match_domains(results)))
    assert asm.ell_hat == model.graph.num_shared
    fit = block_signed_permutation_fit(asm.B_hat, mixing_matrix(model), model_blocks(model.graph))
    assert fit is not None


def test_disjointness_of_accepted_tuples():
    rng = np.random.default_rng(1)
    for seed in range(20):
        model = random_model(seed)
        results = [oracle_ica(model, e, rng) for e in range(model.graph.num_domains)]
        tuples = discover_shared(match_domains(results))
        for e in range(model.graph.num_domains):
            idx = [t.indices[e] for t in tuples]
            assert len(idx) == len(set(idx))
        for a, b in itertools.combinations(tuples, 2):
            assert a.indices != b.indices
