import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dobrushin_gibbs.concentration import (
    BoundError,
    ConcentrationBoundParams,
    bias_constant_M,
    cesaro_bias_check,
    empirical_tail,
    free_site_average_bound,
    gaussian_log_mgf,
    linear_sum,
    mean_magnetization,
    one_sweep_mean,
    one_sweep_values,
    sweep_t1_constant,
    t1_constant,
    t1_mgf_check,
    theorem_bound_a,
    theorem_bound_b,
    up_fraction,
    wilson_interval,
)
from dobrushin_gibbs.core import LipschitzProfile, enumerate_configurations
from dobrushin_gibbs.dobrushin import coefficient_matrix
from dobrushin_gibbs.kernel_exact import gaussian_sweep_law
from dobrushin_gibbs.models import FinitePmf, FreeModel, Gaussian, GaussianLinear, IsingGraph, exact_gibbs_measure


def test_bound_value():
    # rate = (1 - 0)^2 * 2 / (2 * 1/4 * 1 * 1) = 4, so t^2 = 1/2 gives exp(-2)
    p = ConcentrationBoundParams(n=2, N=1, r1=0.0, C1=0.25, alpha=1.0)
    assert theorem_bound_a(p, np.sqrt(0.5)) == pytest.approx(0.1353352832366127, abs=1e-15)


def test_bound_with_r1():
    p = ConcentrationBoundParams(n=200, N=3, r1=0.3, C1=0.25, alpha=1 / 3)
    expected = np.exp(-(0.05**2) * 0.16 * 200 / (2 * 0.25 * (1 / 9) * 3))
    assert theorem_bound_a(p, 0.05) == pytest.approx(expected, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500), st.integers(1, 20), st.floats(0.0, 0.49), st.floats(0.01, 2.0),
       st.floats(0.01, 2.0), st.floats(0.001, 1.0), st.floats(1.01, 3.0))
def test_bound_monotone(n, N, r1, C1, alpha, t, grow):
    base = theorem_bound_a(ConcentrationBoundParams(n, N, r1, C1, alpha), t)
    assert theorem_bound_a(ConcentrationBoundParams(n, N, r1, C1, alpha), t * grow) <= base
    assert theorem_bound_a(ConcentrationBoundParams(n + 1, N, r1, C1, alpha), t) <= base
    assert theorem_bound_a(ConcentrationBoundParams(n, N, r1, C1 * grow, alpha), t) >= base
    assert theorem_bound_a(ConcentrationBoundParams(n, N + 1, r1, C1, alpha), t) >= base
    assert theorem_bound_a(ConcentrationBoundParams(n, N, r1, C1, alpha * grow), t) >= base


@pytest.mark.parametrize("t", [0.01, 0.1, 0.5])
def test_bound_squares_when_n_doubles(t):
    one = theorem_bound_a(ConcentrationBoundParams(1, 2, 0.2, 0.25, 0.5), t)
    two = theorem_bound_a(ConcentrationBoundParams(2, 2, 0.2, 0.25, 0.5), t)
    assert two == pytest.approx(one**2, rel=1e-14)


@pytest.mark.parametrize("r1", [0.5, 0.7])
def test_bound_needs_small_r1(r1):
    p = ConcentrationBoundParams(10, 2, r1, 0.25, 1.0)
    assert not p.admissible
    with pytest.raises(BoundError):
        theorem_bound_a(p, 0.1)
    with pytest.raises(BoundError):
        free_site_average_bound(0.1, 10, 2, 0.25, 1.0, r1=r1)


def test_bound_rejects_bad_arguments():
    p = ConcentrationBoundParams(10, 2, 0.1, 0.25, 1.0)
    with pytest.raises(ValueError):
        theorem_bound_a(p, 0.0)
    with pytest.raises(BoundError):
        theorem_bound_b(p, 0.1)
    with pytest.raises(ValueError):
        ConcentrationBoundParams(0, 2, 0.1, 0.25, 1.0)


def test_free_site_average_rate():
    # rate nN: with ||g|| = 2, C1 = 1/4 the exponent is t^2 nN / 2
    assert free_site_average_bound(0.1, 100, 50, 0.25, 2.0) == pytest.approx(np.exp(-0.01 * 5000 / 2), rel=1e-14)


@pytest.mark.parametrize("model,C1", [
    (IsingGraph.path(3, 0.2), 0.25),
    (GaussianLinear(np.array([[0, 0.1], [0.2, 0]]), None, [0.5, 0.7]), 0.49),
    (FreeModel(4, Gaussian(0.0, 3.0)), 9.0),
])
def test_t1_constant(model, C1):
    assert t1_constant(model) == pytest.approx(C1, rel=1e-15)


def test_sweep_t1_constant():
    assert sweep_t1_constant(4, 0.25, 0.5) == pytest.approx(4.0)
    with pytest.raises(BoundError):
        sweep_t1_constant(4, 0.25, 1.0)


@pytest.mark.parametrize("factory,N,alpha", [(up_fraction, 3, 1 / 3), (mean_magnetization, 4, 0.5)])
def test_observable_lipschitz(factory, N, alpha):
    f = factory(N)
    assert f.alpha == pytest.approx(alpha, rel=1e-15)
    X = enumerate_configurations(2, N)
    # the largest change from flipping one site equals the Lipschitz norm
    worst = 0.0
    for j in range(N):
        Y = X.copy()
        Y[:, j] ^= 1
        worst = max(worst, float(np.abs(f(X) - f(Y)).max()))
    assert worst == pytest.approx(alpha, rel=1e-14)


def test_linear_sum_observable():
    f = linear_sum(3, [1.0, -2.0, 0.5])
    assert f(np.array([[1.0, 1.0, 2.0]])) == pytest.approx([0.0])
    assert f.alpha == 2.0


def test_bias_constant_zero_for_free_model():
    model = FreeModel(5, FinitePmf([0.5, 0.5]))
    assert bias_constant_M(model, up_fraction(5).profile(), np.zeros(5, dtype=np.int64)).value == 0.0


def test_bias_constant_exact_formula():
    model = IsingGraph.path(3, 0.3)
    mu = exact_gibbs_measure(model)
    x = np.array([1, 1, 1])
    r = coefficient_matrix(model).r
    # E_mu d(x^i, Y^i) = mu(Y^i = 0) for x = all ones; the middle and ends agree by symmetry
    p_down = mu @ (enumerate_configurations(2, 3) == 0)
    expected = r / (1 - r) * p_down.max() * 3 * (1 / 3)
    M = bias_constant_M(model, up_fraction(3).profile(), x, mu=mu)
    assert M.exact and M.value == pytest.approx(expected, rel=1e-14)


def test_bias_constant_sampled_estimate():
    model = IsingGraph.path(3, 0.3, field=[0.3, 0, 0])
    mu = exact_gibbs_measure(model)
    x = np.zeros(3, dtype=np.int64)
    prof = mean_magnetization(3).profile()
    exact = bias_constant_M(model, prof, x, mu=mu)
    rng = np.random.default_rng(17)
    samples = enumerate_configurations(2, 3)[rng.choice(8, size=200_000, p=mu)]
    est = bias_constant_M(model, prof, x, samples=samples)
    assert not est.exact
    assert abs(est.value - exact.value) < 4 * est.stderr


def test_bias_constant_needs_contraction():
    with pytest.raises(BoundError):
        bias_constant_M(IsingGraph.path(3, 0.1), up_fraction(3).profile(), [0, 0, 0], r=1.0)


def test_cesaro_bias_within_bound():
    model = IsingGraph.path(3, 0.25, field=[0.4, 0.0, -0.1])
    rows = cesaro_bias_check(model, up_fraction(3), [0, 0, 0], [1, 5, 50])
    assert all(row.holds for row in rows)
    assert rows[-1].gap < rows[0].gap


@pytest.mark.parametrize("count,trials", [(0, 100), (7, 100), (50, 100), (1000, 1000)])
def test_wilson_interval_formula(count, trials):
    z = 1.959963984540054
    p = count / trials
    centre = (p + z * z / (2 * trials)) / (1 + z * z / trials)
    half = z / (1 + z * z / trials) * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials**2))
    lo, hi = wilson_interval(count, trials)
    assert lo == pytest.approx(max(centre - half, 0.0), abs=1e-12)
    assert hi == pytest.approx(min(centre + half, 1.0), abs=1e-12)


def test_empirical_tail_free_model():
    model = FreeModel(4, FinitePmf([0.5, 0.5]))
    rep = empirical_tail(model, up_fraction(4), np.zeros(4, dtype=np.int64), 20, [0.05, 0.1, 0.2], 4000, seed=6)
    assert rep.centering_exact and rep.centering == pytest.approx(0.5, abs=1e-14)
    assert rep.M == 0.0
    assert not rep.violations().any()
    assert np.all(np.diff(rep.tail_count) <= 0)
    with pytest.raises(ValueError):
        empirical_tail(model, up_fraction(4), np.zeros(4, dtype=np.int64), 20, [0.1], 999, seed=6)


def test_empirical_tail_reports_nan_when_unproved():
    model = IsingGraph.path(3, 0.5)  # r1 = 2 tanh(1/2) > 1/2
    rep = empirical_tail(model, up_fraction(3), [0, 0, 0], 10, [0.1], 1000, seed=1)
    assert np.isnan(rep.bound_a).all()
    assert not rep.violations().any()


def test_one_sweep_mean_matches_kernel_and_sampling():
    model = IsingGraph.path(3, 0.4)
    F = up_fraction(3)
    exact = one_sweep_mean(model, [1, 0, 1], F)
    vals = one_sweep_values(model, [1, 0, 1], F, 40_000, seed=2)
    assert abs(vals.mean() - exact) < 4 * vals.std() / np.sqrt(vals.size)
    free = FreeModel(3, FinitePmf([0.3, 0.7]))
    assert one_sweep_mean(free, [0, 0, 0], F) == pytest.approx(0.7, abs=1e-15)


def test_gaussian_log_mgf_oracle():
    A = np.array([[0, 0.2, 0.1], [0.3, 0, 0.1], [0.0, 0.2, 0]])
    model = GaussianLinear(A, None, 0.8)
    w = np.array([1.0, -1.0, 0.5])
    _, cov = gaussian_sweep_law(model, np.zeros(3))
    lam = np.array([-0.5, 0.25, 1.0])
    np.testing.assert_allclose(gaussian_log_mgf(model, np.zeros(3), w, lam), lam**2 * (w @ cov @ w) / 2, rtol=1e-15)
    vals = one_sweep_values(model, np.zeros(3), linear_sum(3, w), 100_000, seed=4)
    rows = t1_mgf_check(vals, 1.0, lam, C=1.0, mean=one_sweep_mean(model, np.zeros(3), linear_sum(3, w)))
    for row, exact in zip(rows, gaussian_log_mgf(model, np.zeros(3), w, lam)):
        assert abs(row.log_mgf - exact) < row.slack


def test_mgf_check_flags_violation():
    # a +-1 coin has log E exp(lam X) = log cosh(lam) > lam^2 C / 2 when C is far too small
    vals = np.where(np.random.default_rng(0).random(20_000) < 0.5, -1.0, 1.0)
    rows = t1_mgf_check(vals, 1.0, [2.0], C=0.1, mean=0.0)
    assert not rows[0].holds
    rows = t1_mgf_check(vals, 1.0, [2.0], C=1.0, mean=0.0)
    assert rows[0].holds
    with pytest.raises(ValueError):
        t1_mgf_check(vals[:100], 1.0, [1.0], C=1.0)


def test_lipschitz_profile_validation():
    with pytest.raises(ValueError):
        LipschitzProfile((1.0, -0.1))
