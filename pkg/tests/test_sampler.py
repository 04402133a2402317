import numpy as np
import pytest

from dobrushin_gibbs.dobrushin import coefficient_matrix, q_product
from dobrushin_gibbs.kernel_exact import build_transition_matrix, evolve, stationary
from dobrushin_gibbs.kernels import BACKENDS
from dobrushin_gibbs.models import FinitePmf, FinitePotential, FreeModel, Gaussian, GaussianLinear, IsingGraph
from dobrushin_gibbs.rng import UniformStream
from dobrushin_gibbs.sampler import (
    coupled_sweep,
    coupled_trajectory,
    draw_initial_states,
    estimate_w1_decay,
    gibbs_sweep,
    marginal_validity_check,
    resolve_threads,
    run_chain,
    sample_states,
    simulation_summary,
)

CASES = {
    "ising": (IsingGraph.from_edges(4, [(0, 1, 1.0), (1, 2, 0.5), (2, 3, 1.0), (0, 3, -0.7)], 0.4, [0.1, 0, 0, -0.1]),
              [1, 1, 1, 1], [0, 0, 0, 0]),
    "potential": (FinitePotential(3, 3, np.random.default_rng(2).normal(size=27)), [0, 0, 0], [2, 1, 2]),
    "free-pmf": (FreeModel(3, FinitePmf([0.2, 0.3, 0.5])), [0, 0, 0], [2, 2, 2]),
    "gaussian": (GaussianLinear(np.array([[0, 0.3, 0], [0.2, 0, 0.2], [0, 0.4, 0]]), [0.1, 0, -0.1], 0.9),
                 [3.0, -1.0, 0.0], [-2.0, 0.5, 1.0]),
    "free-gauss": (FreeModel(2, Gaussian(1.0, 2.0)), [0.0, 0.0], [5.0, -5.0]),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_batched_matches_scalar(name):
    model, x0, y0 = CASES[name]
    k_max, seed = 6, 123
    rep = estimate_w1_decay(model, x0, y0, k_max, replicas=3, seed=seed)
    dist = np.zeros_like(rep.mean_site)
    for r in range(3):
        traj = coupled_trajectory(model, x0, y0, k_max, seed, replica=r)
        dist += traj.distances
    np.testing.assert_array_equal(rep.mean_site * 3, dist)


@pytest.mark.parametrize("name", sorted(CASES))
def test_first_chain_of_pair_is_plain_chain(name):
    model, x0, y0 = CASES[name]
    stream = UniformStream(7, 2)
    z = np.asarray(model.configuration(x0))
    x, y = z.copy(), np.asarray(model.configuration(y0))
    for k in range(4):
        z = gibbs_sweep(model, z, stream, sweep=k)
        x, y = coupled_sweep(model, x, y, stream, sweep=k)
        np.testing.assert_array_equal(x, z)


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")
@pytest.mark.parametrize("name", sorted(CASES))
def test_backends_agree_bitwise(name):
    model, x0, y0 = CASES[name]
    a = estimate_w1_decay(model, x0, y0, 8, 500, seed=5, backend="python")
    b = estimate_w1_decay(model, x0, y0, 8, 500, seed=5, backend="cython")
    np.testing.assert_array_equal(a.mean_site, b.mean_site)
    np.testing.assert_array_equal(a.stderr_l1, b.stderr_l1)
    sa = sample_states(model, x0, 5, 300, seed=9, backend="python")
    sb = sample_states(model, x0, 5, 300, seed=9, backend="cython")
    np.testing.assert_array_equal(sa, sb)


@pytest.mark.parametrize("threads", [2, 4])
def test_thread_count_does_not_change_results(threads):
    model, x0, y0 = CASES["ising"]
    a = estimate_w1_decay(model, x0, y0, 10, 5000, seed=1, threads=1, shard_size=512)
    b = estimate_w1_decay(model, x0, y0, 10, 5000, seed=1, threads=threads, shard_size=512)
    np.testing.assert_array_equal(a.mean_l1, b.mean_l1)
    np.testing.assert_array_equal(a.stderr_l1, b.stderr_l1)


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("DOBRUSHIN_GIBBS_THREADS", "3")
    assert resolve_threads() == 3
    assert resolve_threads(2) == 2
    monkeypatch.delenv("DOBRUSHIN_GIBBS_THREADS")
    assert resolve_threads() == 1
    with pytest.raises(ValueError):
        resolve_threads(0)


def test_free_model_coalesces_in_one_sweep():
    model = FreeModel(6, FinitePmf([0.5, 0.5]))
    rep = estimate_w1_decay(model, np.zeros(6, dtype=np.int64), np.ones(6, dtype=np.int64), 5, 1000, seed=3)
    assert rep.mean_l1[0] == 6 and np.all(rep.mean_l1[1:] == 0)
    assert rep.coalesced_at == 1


def test_equal_starts_stay_equal():
    model, x0, _ = CASES["ising"]
    rep = estimate_w1_decay(model, x0, x0, 10, 200, seed=4)
    assert not rep.mean_l1.any()
    assert rep.coalesced_at == 0


def test_decay_dominated_by_q_power():
    model, x0, y0 = CASES["ising"]
    rep = estimate_w1_decay(model, x0, y0, 12, 20_000, seed=11)
    assert np.all(rep.mean_l1 <= rep.bound_qk + 3 * rep.stderr_l1 + 1e-12)
    Q = q_product(coefficient_matrix(model)).Q
    np.testing.assert_allclose(rep.bound_qk_sites[2], Q @ Q @ rep.mean_site[0], atol=1e-15)


def test_decay_report_csv_layout():
    model, x0, y0 = CASES["ising"]
    rep = estimate_w1_decay(model, x0, y0, 3, 10, seed=0)
    assert rep.header() == ["sweep", "mean_site_1", "mean_site_2", "mean_site_3", "mean_site_4",
                            "mean_l1", "stderr_l1", "bound_nrk", "bound_qk"]
    assert len(rep.rows()) == 4 and rep.rows()[0][0] == 0


def test_run_chain_shape_and_start():
    model, x0, _ = CASES["potential"]
    path = run_chain(model, x0, 5, UniformStream(1))
    assert path.shape == (6, 3)
    np.testing.assert_array_equal(path[0], x0)
    with pytest.raises(ValueError):
        run_chain(model, x0, -1, UniformStream(1))


def test_chain_law_matches_exact_kernel():
    model = IsingGraph.path(4, 0.3, field=[0.2, 0, 0, 0])
    tm = build_transition_matrix(model)
    x0 = np.zeros(4, dtype=np.int64)
    Z = sample_states(model, x0, 3, 50_000, seed=21)
    law = evolve(tm, x0, [3])[3]
    up_exact = float(law @ tm.configurations()[:, 0])
    se = np.sqrt(up_exact * (1 - up_exact) / Z.shape[0])
    assert abs(Z[:, 0].mean() - up_exact) < 4 * se


def test_long_run_magnetization_matches_gibbs_measure():
    model = IsingGraph.path(4, 0.3, field=[0.2, 0, 0, 0])
    mu = stationary(model)
    tm = build_transition_matrix(model)
    m_exact = float(mu @ (2 * tm.configurations() - 1).mean(axis=1))
    summ = simulation_summary(model, np.zeros(4, dtype=np.int64), 30, 20_000, seed=8,
                              observable=lambda X: (2 * X - 1).mean(axis=1))
    assert abs(summ.obs_mean[-1] - m_exact) < 4 * summ.obs_stderr[-1]


def test_initial_state_draws_follow_pmf():
    model = IsingGraph.path(2, 0.1)
    pmf = np.array([0.1, 0.2, 0.3, 0.4])
    X = draw_initial_states(model, pmf, 40_000, seed=2)
    idx = X[:, 0] * 2 + X[:, 1]
    freq = np.bincount(idx, minlength=4) / idx.size
    assert np.all(np.abs(freq - pmf) < 4 * np.sqrt(pmf * (1 - pmf) / idx.size))


@pytest.mark.parametrize("name,i", [("ising", 1), ("potential", 2), ("gaussian", 0)])
def test_marginal_validity(name, i):
    model, x0, y0 = CASES[name]
    rep = marginal_validity_check(model, x0, y0, i, draws=20_000, seed=3)
    assert not rep.flagged
    assert rep.test == ("ks" if name == "gaussian" else "chi2")


def test_marginal_validity_mismatch_rate_is_tv():
    model, x0, y0 = CASES["ising"]
    p = model.conditional(1, np.array(x0)).probs
    q = model.conditional(1, np.array(y0)).probs
    tv = 0.5 * np.abs(p - q).sum()
    rep = marginal_validity_check(model, x0, y0, 1, draws=50_000, seed=1)
    assert abs(rep.mismatch_rate - tv) < 4 * np.sqrt(tv * (1 - tv) / 50_000)


def test_marginal_validity_needs_enough_draws():
    model, x0, y0 = CASES["ising"]
    with pytest.raises(ValueError):
        marginal_validity_check(model, x0, y0, 0, draws=999)
