import math

import numpy as np
import pytest

from qnnlv.circuit import UnitarySample
from qnnlv.config import load_config
from qnnlv.errors import InsufficientDataError, InvalidParameterError, RangeError
from qnnlv.stats import (EnsembleSummary, autocorrelation, autocorrelator, ensemble_summaries, fit_exponential,
                         fit_power_law, frame_potential_mc, frame_potential_rh_closed, run_ensemble,
                         sample_ensemble, scaling_relations_check, summarize)
from qnnlv.training import Trajectory, derived_diagnostics


def make_traj(eps, K, mu=None, stride=10, eta=1e-3):
    eps, K = np.asarray(eps, float), np.asarray(K, float)
    mu = 0.5 * K if mu is None else np.asarray(mu, float)
    data = {"t": np.arange(eps.size) * stride, "epsilon": eps, "K": K, "mu": mu}
    data["lambda"], data["zeta"], data["C"] = derived_diagnostics(eps, K, mu)
    return Trajectory(data, np.zeros(1), {"eta": eta})


def small_config(**over):
    items = ["observable=xxz(2,2)", "ansatz=rpa(6)", "O0=min+1", "eta=1e-2", "steps=60",
             "record_stride=10", "mu_stride=10", "trajectories=3", "master_seed=5"]
    items += [f"{k}={v}" for k, v in over.items()]
    return load_config(None, items)


def test_summary_of_identical_samples_has_zero_sd():
    s = summarize("K", [2.5, 2.5])
    assert s.sd == 0.0 and s.mean == 2.5 and s.n_samples == 2


def test_summary_drops_nan_and_needs_data():
    assert summarize("x", [1.0, np.nan, 3.0]).n_samples == 2
    with pytest.raises(InsufficientDataError):
        summarize("x", [np.nan])


def test_ratio_of_means_and_mean_of_ratios_differ():
    a = make_traj(np.ones(10), np.full(10, 1.0), np.full(10, 1.0))
    b = make_traj(np.ones(10), np.full(10, 3.0), np.full(10, 1.0))
    out = {s.quantity: s for s in ensemble_summaries([a, b])}
    assert np.isclose(out["lambda_bar_inf"].mean, 2.0 / 4.0)
    assert np.isclose(out["lambda_inf"].mean, (1.0 + 1 / 3) / 2)
    assert out["lambda_bar_inf"].sd >= 0


def test_run_ensemble_is_schedule_independent():
    cfg = small_config()
    serial = run_ensemble(cfg, jobs=1)
    parallel = run_ensemble(cfg, jobs=2)
    assert [s.as_dict() for s in serial.summaries] == [s.as_dict() for s in parallel.summaries]
    for a, b in zip(serial.trajectories, parallel.trajectories):
        assert np.array_equal(a["K"], b["K"])
    seeds = {tr.meta["seed"] for tr in serial.trajectories}
    assert len(seeds) == 3


def test_run_ensemble_reports_failed_seeds():
    cfg = small_config(eta=3.0, **{"train.guard": 1.05, "O0": "min+2"})
    res = run_ensemble(cfg)
    assert res.failed
    assert all({"index", "seed", "error", "partial"} <= set(f) for f in res.failed)
    assert len(res.trajectories) + len(res.failed) == 3


def test_run_ensemble_needs_two_samples():
    with pytest.raises(InvalidParameterError):
        run_ensemble(small_config(), M=1)


def test_constant_series_has_zero_autocorrelator():
    trajs = [make_traj(np.full(100, 0.3), np.ones(100)) for _ in range(3)]
    rep = autocorrelator(trajs, "epsilon", 100, [10, 50, 200])
    assert np.all(rep.A_values == 0)


def test_autocorrelator_range_checks():
    trajs = [make_traj(np.linspace(1, 0, 20), np.ones(20))]
    with pytest.raises(RangeError):
        autocorrelation(trajs, "epsilon", 100, [200])
    with pytest.raises(RangeError):
        autocorrelation(trajs, "epsilon", 15, [10])


def test_exponential_autocorrelator_recovers_length():
    t = np.arange(0, 20000, 10)
    rng = np.random.default_rng(0)
    xi = 800.0
    trajs = [make_traj(a * np.exp(-t / xi), np.ones(t.size)) for a in rng.uniform(0.5, 1.5, 20)]
    rep = autocorrelator(trajs, "epsilon", 1000, np.arange(0, 3000, 100), regime="frozen_kernel")
    assert rep.fit_kind == "exponential"
    assert abs(rep.xi / xi - 1) < 0.02


def test_power_law_autocorrelator_gives_half_dimension():
    t = np.arange(0, 200_000, 10)
    trajs = [make_traj(1.0 / (1e-2 * t + b), np.ones(t.size)) for b in (1.0, 2.0, 3.0)]
    rep = autocorrelator(trajs, "epsilon", 100, np.geomspace(2000, 20000, 8).astype(int) // 10 * 10,
                         regime="critical")
    assert rep.fit_kind == "power_law"
    assert 0.3 < rep.delta < 0.7


def test_fit_helpers():
    tau = np.arange(1, 50)
    xi, amp = fit_exponential(tau, 3 * np.exp(-tau / 7.0))
    assert np.isclose(xi, 7.0) and np.isclose(amp, 3.0)
    slope, amp = fit_power_law(tau, 2 * tau ** -1.0)
    assert np.isclose(slope, -1.0) and np.isclose(amp, 2.0)
    with pytest.raises(InsufficientDataError):
        fit_exponential([1, 2], [-1.0, -2.0])


def test_scaling_relations():
    assert scaling_relations_check({"epsilon": 0.5, "K": 0.5, "mu": 0.5}) == (0.0, 0.0)
    r1, r2 = scaling_relations_check({"epsilon": 0.5, "K": 0.5, "mu": 0.8})
    assert np.isclose(r1, 0.3) and np.isclose(r2, -0.3)


def test_repeated_unitary_frame_potential():
    u = UnitarySample(np.eye(4, dtype=complex), "haar")
    value, se = frame_potential_mc([u] * 10, k=2)
    assert np.isclose(value, 4.0**4) and se == 0.0


def test_frame_potential_order_limits():
    samples = sample_ensemble("haar", 2, 5, 0)
    with pytest.raises(InvalidParameterError):
        frame_potential_mc(samples, 5)
    with pytest.raises(InvalidParameterError):
        frame_potential_rh_closed(9)


def test_closed_form_frame_potential():
    assert frame_potential_rh_closed(2) == (7, 6)
    assert frame_potential_rh_closed(1) == (2, 2)
    for k in range(7):
        value, bound = frame_potential_rh_closed(k)
        assert value >= bound


@pytest.mark.parametrize("k", [1, 2])
def test_haar_frame_potential_is_minimal(k):
    value, se = frame_potential_mc(sample_ensemble("haar", 8, 400, 1), k)
    assert value >= math.factorial(k) - 3 * se


@pytest.mark.parametrize("d", [4, 8])
@pytest.mark.parametrize("k", [1, 2])
def test_restricted_haar_matches_closed_form(d, k):
    value, se = frame_potential_mc(sample_ensemble("restricted_haar", d, 600, 10 * d + k), k)
    closed, _ = frame_potential_rh_closed(k)
    assert abs(value - float(closed)) < 3 * se
