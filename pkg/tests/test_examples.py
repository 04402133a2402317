"""Small worked examples with hand-computable answers, one module after another."""
import itertools
import json

import numpy as np
import pytest
from scipy import stats

from dobrushin_gibbs.cli import main
from dobrushin_gibbs.concentration import (
    ConcentrationBoundParams,
    bias_constant_M,
    empirical_tail,
    gaussian_log_mgf,
    mean_magnetization,
    sweep_t1_constant,
    t1_mgf_check,
    theorem_bound_a,
    up_fraction,
)
from dobrushin_gibbs.core import enumerate_configurations
from dobrushin_gibbs.dobrushin import (
    coefficient_matrix,
    dobrushin_norms,
    q_closed_form,
    q_product,
    ricci_lower_bound,
    update_matrix,
    verify_lemma_bounds,
)
from dobrushin_gibbs.kernel_exact import (
    build_transition_matrix,
    exact_w1,
    exact_w1_to_stationary,
    invariance_check,
    stationary,
    total_variation_to_stationary,
)
from dobrushin_gibbs.models import (
    FinitePmf,
    FinitePotential,
    FreeModel,
    GaussianLinear,
    IsingGraph,
    conditional_distribution,
    conditional_sample,
    exact_gibbs_measure,
)
from dobrushin_gibbs.rng import UniformStream
from dobrushin_gibbs.sampler import (
    estimate_w1_decay,
    gibbs_sweep,
    marginal_validity_check,
    run_chain,
    sample_states,
)
from dobrushin_gibbs.transport import (
    exact_ot_finite,
    kantorovich_dual_check,
    maximal_coupling_from_uniforms,
    w1_discrete_metric,
    w1_real_line,
)

# --------------------------------------------------------------------------
# models


def test_zero_temperature_ising_conditional_is_fair():
    model = IsingGraph.path(3, 0.0)
    for x in itertools.product(range(2), repeat=3):
        np.testing.assert_array_equal(conditional_distribution(model, 1, x).probs, [0.5, 0.5])
    rng = np.random.default_rng(0)
    draws = np.array([conditional_sample(model, 1, (1, 0, 1), rng) for _ in range(100_000)])
    assert abs(draws.mean() - 0.5) <= 3 * np.sqrt(0.25 / 100_000)


def test_point_mass_free_model_is_deterministic():
    model = FreeModel(3, FinitePmf([0.0, 1.0, 0.0]))
    for u in (1e-12, 0.3, 0.999999):
        assert conditional_sample(model, 2, (0, 2, 0), u) == 1
    np.testing.assert_array_equal(gibbs_sweep(model, [2, 0, 2], UniformStream(5)), [1, 1, 1])


def test_sampling_is_reproducible_for_fixed_stream():
    model = IsingGraph.path(4, 0.4)
    a = run_chain(model, [1, 0, 1, 0], 20, UniformStream(42))
    b = run_chain(model, [1, 0, 1, 0], 20, UniformStream(42))
    np.testing.assert_array_equal(a, b)


def test_two_site_gibbs_measure_values():
    np.testing.assert_allclose(exact_gibbs_measure(IsingGraph.path(2, 0.0)), 0.25, atol=1e-16)
    mu = exact_gibbs_measure(IsingGraph.path(2, 0.3))
    aligned = np.exp(0.3) / (2 * np.exp(0.3) + 2 * np.exp(-0.3))
    assert aligned == pytest.approx(0.3228281531128977, abs=1e-15)
    np.testing.assert_allclose(mu[[0, 3]], aligned, atol=1e-15)


def test_constant_potential_gives_product_of_reference():
    pi = np.array([0.2, 0.3, 0.5])
    mu = exact_gibbs_measure(FinitePotential(2, 3, np.full(9, 4.2), pi))
    np.testing.assert_allclose(mu, np.outer(pi, pi).reshape(-1), atol=1e-15)


# --------------------------------------------------------------------------
# coefficients and sweep matrices


def test_norms_are_max_row_and_column_sums():
    C = np.array([[0, 0.2, 0], [0.4, 0, 0.5], [0, 0.5, 0]])
    np.testing.assert_allclose(C.sum(axis=1), [0.2, 0.9, 0.5])
    np.testing.assert_allclose(C.sum(axis=0), [0.4, 0.7, 0.5])
    norms = dobrushin_norms(C)
    assert (norms.r, norms.r1) == pytest.approx((0.9, 0.7), abs=1e-15)
    assert dobrushin_norms(np.zeros((3, 3)))[:2] == (0.0, 0.0)


def test_update_matrices_two_sites():
    a, b = 0.3, 0.7
    C = np.array([[0, a], [b, 0]])
    np.testing.assert_array_equal(update_matrix(C, 0), [[0, a], [0, 1]])
    np.testing.assert_array_equal(update_matrix(C, 1), [[1, 0], [b, 0]])
    np.testing.assert_array_equal(update_matrix(np.zeros((3, 3)), 1), np.diag([1.0, 0.0, 1.0]))
    Q = q_product(C).Q
    np.testing.assert_allclose(Q, [[0, a], [0, a * b]], atol=1e-16)
    assert q_closed_form(C)[1, 1] == pytest.approx(a * b, abs=1e-16)


def test_first_column_of_q_vanishes():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        C = rng.random((n, n))
        np.fill_diagonal(C, 0.0)
        assert not q_product(C).Q[:, 0].any()


def test_zero_matrix_bounds_are_tight():
    cert = verify_lemma_bounds(np.zeros((4, 4)))
    assert cert.inf_norm == cert.r == 0 and cert.one_norm == cert.one_norm_bound == 0
    assert cert.inf_holds and cert.one_holds
    np.testing.assert_array_equal(q_closed_form(np.zeros((4, 4))), 0.0)


def test_two_site_gaussian_certificate():
    C = coefficient_matrix(GaussianLinear.two_site(0.3))
    cert = verify_lemma_bounds(C.C)
    assert cert.one_norm == pytest.approx(0.39, abs=1e-15)
    assert cert.one_norm_bound == pytest.approx(0.3 / 0.7, abs=1e-15)


def test_ricci_third():
    assert ricci_lower_bound(1 / 3) == pytest.approx(0.5, abs=1e-15)


# --------------------------------------------------------------------------
# transport


def _vertex_enumeration(cost, p, q):
    """Minimum over all basic feasible plans: solve on every (m + k - 1)-cell support."""
    m, k = cost.shape
    cells = [(i, j) for i in range(m) for j in range(k)]
    best = np.inf
    for support in itertools.combinations(range(len(cells)), m + k - 1):
        A = np.zeros((m + k, len(support)))
        for col, c in enumerate(support):
            i, j = cells[c]
            A[i, col] = 1.0
            A[m + j, col] = 1.0
        b = np.concatenate([p, q])
        if np.linalg.matrix_rank(A) < m + k - 1:
            continue
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        if np.abs(A @ x - b).max() > 1e-12 or x.min() < -1e-12:
            continue
        best = min(best, sum(x[col] * cost[cells[c]] for col, c in enumerate(support)))
    return best


@pytest.mark.parametrize("seed", range(6))
def test_ot_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    m, k = (3, 3) if seed < 3 else (4, 3)
    cost = rng.uniform(0, 2, size=(m, k))
    p, q = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(k))
    assert exact_ot_finite(cost, p, q).cost == pytest.approx(_vertex_enumeration(cost, p, q), abs=1e-9)


def test_small_transport_examples():
    assert w1_discrete_metric([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert w1_discrete_metric([1, 0], [0, 1]) == 1.0
    assert w1_discrete_metric([0.7, 0.3], [0.4, 0.6]) == pytest.approx(0.3, abs=1e-15)
    assert exact_ot_finite(1 - np.eye(2), [0.7, 0.3], [0.4, 0.6]).cost == pytest.approx(0.3, abs=1e-12)
    pts = FinitePmf([1.0], support=[0.0]), FinitePmf([1.0], support=[2.0])
    assert w1_real_line(*pts) == pytest.approx(2.0)


def test_identity_and_point_mass_plans():
    cost = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    p = np.array([0.2, 0.5, 0.3])
    plan = exact_ot_finite(cost, p, p)
    assert plan.cost == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(plan.matrix((3, 3)), np.diag(p), atol=1e-14)
    assert kantorovich_dual_check(plan, p, p, cost) == pytest.approx(0.0, abs=1e-14)
    point = exact_ot_finite(cost, [1, 0, 0], [0, 0, 1])
    assert point.cost == 2.0 and point.support == ((0, 2, 1.0),)


def test_discrete_witness_gives_half_tv():
    rng = np.random.default_rng(4)
    cost = 1 - np.eye(5)
    for _ in range(5):
        p, q = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        plan = exact_ot_finite(cost, p, q)
        gap, f = kantorovich_dual_check(plan, p, q, cost, return_witness=True)
        assert float(f @ (p - q)) == pytest.approx(w1_discrete_metric(p, q), abs=1e-12)
        assert gap < 1e-12


def test_maximal_coupling_mismatch_rate():
    p, q = np.array([0.7, 0.3]), np.array([0.4, 0.6])
    u = np.random.default_rng(12).random((100_000, 3))
    mism = np.mean([a != b for a, b in (maximal_coupling_from_uniforms(p, q, *row) for row in u)])
    assert abs(mism - 0.3) <= 3 * np.sqrt(0.3 * 0.7 / 100_000)
    same = [maximal_coupling_from_uniforms(p, p, *row) for row in u[:1000]]
    assert all(a == b for a, b in same)


# --------------------------------------------------------------------------
# sampler


def test_free_model_sweep_ignores_input():
    model = FreeModel(2, FinitePmf([0.2, 0.8]))
    a = sample_states(model, [0, 0], 1, 5000, seed=3)
    b = sample_states(model, [1, 1], 1, 5000, seed=3)
    np.testing.assert_array_equal(a, b)
    assert abs(a.mean() - 0.8) < 4 * np.sqrt(0.16 / a.size)


def test_zero_temperature_sweeps_are_uniform():
    Z = sample_states(IsingGraph.path(3, 0.0), [1, 1, 1], 1, 40_000, seed=5)
    counts = np.bincount(Z @ np.array([4, 2, 1]), minlength=8)
    assert stats.chisquare(counts).pvalue > 1e-4


def test_k_max_zero_returns_start():
    np.testing.assert_array_equal(run_chain(IsingGraph.path(2, 0.2), [1, 0], 0, UniformStream(0)), [[1, 0]])


def test_coupled_decay_slope():
    beta = float(np.arctanh(0.4))  # 2 tanh(beta) = 0.8
    model = IsingGraph.path(3, beta)
    rep = estimate_w1_decay(model, [1, 1, 1], [0, 0, 0], 8, 10_000, seed=13)
    k = np.arange(1, 9)
    keep = rep.mean_l1[k] > 0
    slope = np.polyfit(k[keep], np.log(rep.mean_l1[k][keep]), 1)[0]
    assert slope <= np.log(0.8) + 0.1


def test_validity_of_identical_inputs():
    model = IsingGraph.path(3, 0.3)
    rep = marginal_validity_check(model, [1, 0, 1], [1, 0, 1], 1, draws=10_000)
    assert rep.mismatch_rate == 0.0 and not rep.flagged


# --------------------------------------------------------------------------
# exact kernels


def test_free_and_flat_kernels():
    free = FreeModel(2, FinitePmf([0.2, 0.8]))
    P = build_transition_matrix(free).P
    np.testing.assert_allclose(P, np.tile(exact_gibbs_measure(free), (4, 1)), atol=1e-15)
    assert invariance_check(P, exact_gibbs_measure(free)) < 1e-15
    np.testing.assert_allclose(build_transition_matrix(IsingGraph.path(3, 0.0)).P, 1 / 8, atol=1e-15)


def test_two_site_kernel_against_simulation():
    model = IsingGraph.path(2, 0.3)
    P = build_transition_matrix(model).P
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-15)
    configs = enumerate_configurations(2, 2)
    reps = 250_000
    for s, x in enumerate(configs):
        Z = sample_states(model, x, 1, reps, seed=100 + s)
        freq = np.bincount(Z @ np.array([2, 1]), minlength=4) / reps
        assert np.all(np.abs(freq - P[s]) <= 3 * np.sqrt(P[s] * (1 - P[s]) / reps) + 1e-12)


def test_invariance_negative_control():
    model = IsingGraph.path(3, 0.4)
    mu = stationary(model)
    assert invariance_check(build_transition_matrix(model), mu) <= 1e-10
    bad = mu.copy()
    bad[2] += 0.01
    bad /= bad.sum()
    assert invariance_check(build_transition_matrix(model), bad) > 1e-3


def test_free_model_distance_to_equilibrium():
    model = FreeModel(3, FinitePmf([0.3, 0.7]))
    tm = build_transition_matrix(model)
    mu = stationary(model)
    x0 = np.ones(3, dtype=np.int64)  # the mode
    rows = exact_w1_to_stationary(tm, mu, x0, [0, 1, 2], r=0.0)
    assert rows[0].w1_exact == pytest.approx(3 * 0.3, abs=1e-12)
    assert rows[1].w1_exact == pytest.approx(0.0, abs=1e-15)
    assert rows[2].w1_exact == pytest.approx(0.0, abs=1e-15)
    assert total_variation_to_stationary(tm, mu, x0, 1) == pytest.approx(0.0, abs=1e-15)


def test_geometric_ratio_on_three_site_path():
    model = IsingGraph.path(3, 0.3)
    r = coefficient_matrix(model).r
    tm = build_transition_matrix(model)
    rows = exact_w1_to_stationary(tm, stationary(model), [1, 1, 1], range(11), r=r)
    w = np.array([row.w1_exact for row in rows])
    assert np.all(w[1:] <= r * w[:-1] + 1e-15)


def test_stationary_start_and_two_site_chain():
    model = IsingGraph.path(2, 0.3)
    tm = build_transition_matrix(model)
    mu = stationary(model)
    assert exact_w1(tm, mu, mu) == 0.0
    r = coefficient_matrix(model).r
    for row in exact_w1_to_stationary(tm, mu, [1, 1], [1, 2, 3], r=r):
        assert row.tv_half <= row.w1_exact + 1e-15 <= 2 * r**row.k + 1e-15


# --------------------------------------------------------------------------
# concentration


def test_bound_tends_to_one_at_small_t():
    p = ConcentrationBoundParams(200, 3, 0.3, 0.25, 1 / 3)
    assert theorem_bound_a(p, 1e-9) == pytest.approx(1.0, abs=1e-12)


def test_bias_constant_below_diameter_bound():
    model = IsingGraph.path(3, 0.3)
    prof = mean_magnetization(3).profile()
    r = coefficient_matrix(model).r
    M = bias_constant_M(model, prof, [1, 1, 1], mu=stationary(model))
    assert M.value <= r / (1 - r) * prof.sum_deltas


def test_tail_zero_beyond_range():
    model = IsingGraph.path(3, float(np.arctanh(0.15)))
    rep = empirical_tail(model, up_fraction(3), [1, 1, 1], 20, [1.5], 1000, seed=2)
    assert rep.tail_count[0] == 0 and rep.ci_lo[0] <= rep.bound_a[0]


def test_gaussian_mgf_closed_form_below_bound():
    r = 0.3
    model = GaussianLinear.two_site(r)
    C = sweep_t1_constant(2, 1 - r * r, r)
    lam = np.linspace(-3, 3, 13)
    exact = gaussian_log_mgf(model, [1.0, -1.0], [1.0, 1.0], lam)
    assert np.all(exact <= lam**2 * C / 2 + 1e-15)
    rows = t1_mgf_check(np.zeros(10_000), 1.0, [0.0], C)
    assert rows[0].log_mgf == rows[0].bound == 0.0


# --------------------------------------------------------------------------
# command line


def test_cli_free_model_and_two_site_exact(tmp_path, capsys):
    cfg = tmp_path / "free.json"
    cfg.write_text(json.dumps({"model": {"kind": "free", "n_sites": 3, "pmf": [0.5, 0.5]}}))
    assert main(["coeffs", "--config", str(cfg), "--out", str(tmp_path / "free")]) == 0
    rows = (tmp_path / "free" / "coefficients.csv").read_text().splitlines()[2:]
    assert all(float(v) == 0.0 for row in rows for v in row.split(",")[1:])
    cfg2 = tmp_path / "ising2.json"
    cfg2.write_text(json.dumps({"model": {"kind": "ising", "n_sites": 2, "beta": 0.3, "edges": "0 1 1"},
                                "x0": [1, 1], "k_max": 6}))
    assert main(["exact", "--config", str(cfg2), "--out", str(tmp_path / "ex")]) == 0
    lines = (tmp_path / "ex" / "exact.csv").read_text().splitlines()[2:]
    for line in lines:
        _, w1, _, env = (float(v) for v in line.split(","))
        assert w1 <= env + 1e-15
    cfg3 = tmp_path / "zero.json"
    cfg3.write_text(json.dumps({"model": {"kind": "ising", "n_sites": 2}, "replicas": 0}))
    assert main(["simulate", "--config", str(cfg3), "--out", str(tmp_path / "z")]) == 2
    capsys.readouterr()
