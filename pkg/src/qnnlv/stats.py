"""Ensembles of trajectories, autocorrelators, scaling dimensions and frame
potentials."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from qnnlv.circuit import (UnitarySample, build_rpa, random_full_support_pauli, random_theta,
                           sample_haar_unitary, sample_restricted_haar)
from qnnlv.errors import DivergenceError, InsufficientDataError, InvalidParameterError, RangeError
from qnnlv.pauli import random_state
from qnnlv.training import (LATE_FRACTION, Trajectory, classify_regime, gradient_with_value,
                            hessian_vector_product)

log = logging.getLogger(__name__)

FINF_FRACTION = 0.1
MAX_FRAME_ORDER = 4
MAX_CLOSED_ORDER = 8


@dataclass(frozen=True)
class EnsembleSummary:
    quantity: str
    mean: float
    sd: float
    n_samples: int
    window: tuple

    @property
    def relative_sd(self) -> float:
        return self.sd / abs(self.mean) if self.mean else float("nan")

    def as_dict(self) -> dict:
        return {"quantity": self.quantity, "mean": self.mean, "sd": self.sd,
                "n_samples": self.n_samples, "window": list(self.window)}


@dataclass
class EnsembleResult:
    trajectories: list
    summaries: list
    failed: list = field(default_factory=list)

    def summary(self, quantity: str) -> EnsembleSummary:
        for s in self.summaries:
            if s.quantity == quantity:
                return s
        raise KeyError(quantity)


def summarize(quantity: str, values, window=(0, 0)) -> EnsembleSummary:
    """Mean and sample SD (ddof=1) of per-sample values, NaNs dropped."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise InsufficientDataError(f"no finite samples for {quantity}")
    sd = float(np.std(v, ddof=1)) if v.size >= 2 else float("nan")
    return EnsembleSummary(quantity, float(np.mean(v)), sd, int(v.size), tuple(int(w) for w in window))


def _jackknife(num, den, combine):
    """Leave-one-out spread of a ratio of sample means, scaled to a per-sample SD."""
    m = len(num)
    if m < 2:
        return float("nan")
    s_num, s_den = np.sum(num), np.sum(den)
    loo = np.array([combine((s_num - num[i]) / (m - 1), (s_den - den[i]) / (m - 1)) for i in range(m)])
    se = math.sqrt((m - 1) / m * np.sum((loo - loo.mean()) ** 2))
    return se * math.sqrt(m)


def ensemble_summaries(trajs, fraction: float = LATE_FRACTION) -> list[EnsembleSummary]:
    """Initial and late-window statistics over trajectories.

    Late values are per-trajectory window means. ``lambda_bar`` and ``zeta_bar``
    are ratios of ensemble means (mu_bar / K_bar, eps_bar mu_bar / K_bar^2);
    ``lambda`` and ``zeta`` are means of the per-sample ratios. The SD of a
    ratio of means is a jackknife estimate scaled to one sample.
    """
    if not trajs:
        raise InsufficientDataError("empty ensemble")
    out = []
    first = trajs[0]
    t_late = first["t"][first.late_window(fraction)]
    late_win = (int(t_late[0]), int(t_late[-1]))
    for key in ("epsilon", "K", "mu", "lambda", "zeta", "C"):
        out.append(summarize(f"{key}_0", [tr[key][0] for tr in trajs], (0, 0)))
    late = {}
    for key in ("epsilon", "K", "mu", "lambda", "zeta", "C"):
        late[key] = np.array([np.nanmean(tr.window(key, fraction)) for tr in trajs])
        out.append(summarize(f"{key}_inf", late[key], late_win))
    for tag, idx, vals in (("0", (0, 0), {k: np.array([tr[k][0] for tr in trajs]) for k in ("epsilon", "K", "mu")}),
                           ("inf", late_win, late)):
        eps, K, mu = vals["epsilon"], vals["K"], vals["mu"]
        lam_bar = float(np.mean(mu) / np.mean(K))
        out.append(EnsembleSummary(f"lambda_bar_{tag}", lam_bar, _jackknife(mu, K, lambda a, b: a / b),
                                   len(K), idx))
        zeta_bar = float(np.mean(eps) * np.mean(mu) / np.mean(K) ** 2)
        em = eps * mu
        spread = _jackknife(em, K, lambda a, b: a / b**2) if len(K) >= 2 else float("nan")
        out.append(EnsembleSummary(f"zeta_bar_{tag}", zeta_bar, spread, len(K), idx))
    return out


def _run_one(args):
    from qnnlv.experiment import Experiment

    cfg, index = args
    try:
        return index, Experiment(cfg).run_trajectory(index), None
    except DivergenceError as exc:
        return index, exc.partial, str(exc)


def run_ensemble(cfg, M: int | None = None, jobs: int | None = None) -> EnsembleResult:
    """M independent trajectories, each with a fresh circuit and initial angles.

    Results are ordered by sample index, so summaries do not depend on the
    worker schedule. Diverged samples are listed in ``failed`` (with their
    partial trajectories) and left out of the summaries.
    """
    from qnnlv.experiment import Experiment, trajectory_seed

    M = cfg.trajectories if M is None else M
    jobs = cfg.jobs if jobs is None else jobs
    if M < 2:
        raise InvalidParameterError("an ensemble needs M >= 2")
    Experiment(cfg).check_resources()
    tasks = [(cfg, i) for i in range(M)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    good = [tr for _, tr, err in results if err is None]
    failed = [{"index": i, "seed": trajectory_seed(cfg.master_seed, i), "error": err, "partial": tr}
              for i, tr, err in results if err is not None]
    for f in failed:
        log.warning("sample %d (seed %d) diverged: %s", f["index"], f["seed"], f["error"])
    summaries = ensemble_summaries(good) if good else []
    return EnsembleResult(good, summaries, failed)


# initial-time and restricted-Haar sampling ------------------------------------------

def initial_kernel_samples(obs, L: int, O0: float, M: int, master_seed: int = 0) -> dict:
    """K, mu and eps*mu at t = 0 over M fresh RPA circuits and initial angles."""
    K, mu, eps_mu = np.empty(M), np.empty(M), np.empty(M)
    for i in range(M):
        rng = np.random.default_rng([master_seed, i])
        circ = build_rpa(obs.n, L, rng)
        theta = random_theta(L, rng)
        expval, g = gradient_with_value(circ, theta, obs)
        K[i] = g @ g
        mu[i] = g @ hessian_vector_product(circ, theta, obs, g)
        eps_mu[i] = (expval - O0) * mu[i]
    return {"K": K, "mu": mu, "eps_mu": eps_mu}


def restricted_haar_kernel_samples(n: int, F0: float, draws: int, rng) -> np.ndarray:
    """Squared single-parameter gradients of a projector loss under restricted Haar.

    The full circuit U sends a random input to a state of fidelity ``F0`` with
    the projector's target; the part before the rotation is Haar and the
    rotation axis is a random full-support Pauli word.
    """
    if not 0.0 <= F0 <= 1.0:
        raise InvalidParameterError("F0 must lie in [0, 1]")
    rng = np.random.default_rng(rng)
    d = 1 << n
    out = np.empty(draws)
    for i in range(draws):
        psi0 = random_state(d, rng)
        target = random_state(d, rng)
        perp = random_state(d, rng)
        perp -= target * np.vdot(target, perp)
        perp /= np.linalg.norm(perp)
        final = math.sqrt(F0) * target + math.sqrt(1.0 - F0) * perp
        U = sample_restricted_haar(d, psi0, final, rng).matrix
        left = sample_haar_unitary(d, rng).matrix
        axis = random_full_support_pauli(n, rng)
        o_final = target * np.vdot(target, U @ psi0)
        bra = left @ (U.conj().T @ o_final)
        ket = axis.apply(left @ psi0)
        out[i] = np.vdot(bra, ket).imag ** 2
    return out


# autocorrelators ------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationReport:
    tau_grid: np.ndarray
    A_values: np.ndarray
    xi: float | None
    delta: float | None
    fit_kind: str
    slope: float = float("nan")
    t0: int = 0
    quantity: str = "epsilon"
    finf_fraction: float = FINF_FRACTION

    def rows(self):
        return [{"tau": int(t), "A": float(a)} for t, a in zip(self.tau_grid, self.A_values)]


def _index_of(t: np.ndarray, step: int) -> int:
    i = int(np.searchsorted(t, step))
    if i >= t.size or t[i] != step:
        raise RangeError(f"step {step} was not recorded (last step {int(t[-1])})")
    return i


def autocorrelation(trajs, quantity: str, t0: int, tau_grid) -> np.ndarray:
    """E[(F(t0) - F_inf)(F(t0 + tau) - F_inf)] with F_inf the tail mean of each trajectory."""
    tau_grid = np.asarray(tau_grid, dtype=int)
    if not trajs:
        raise InsufficientDataError("no trajectories")
    prods = np.zeros((len(trajs), tau_grid.size))
    for j, tr in enumerate(trajs):
        t = np.asarray(tr["t"])
        F = np.asarray(tr[quantity], dtype=float)
        if t0 + int(tau_grid.max()) > t[-1]:
            raise RangeError(f"t0 + max tau = {t0 + int(tau_grid.max())} exceeds trajectory length {int(t[-1])}")
        tail = F[len(F) - max(int(round(FINF_FRACTION * len(F))), 1):]
        f_inf = float(tail[0]) if np.all(tail == tail[0]) else float(np.mean(tail))
        base = F[_index_of(t, t0)] - f_inf
        idx = [_index_of(t, t0 + int(tau)) for tau in tau_grid]
        prods[j] = base * (F[idx] - f_inf)
    A = prods.mean(axis=0)
    if not np.all(np.isfinite(A)):
        raise InsufficientDataError(f"non-finite autocorrelator values for {quantity}")
    return A


def fit_exponential(tau, A) -> tuple[float, float]:
    """``(xi, amplitude)`` from a log-linear fit of A = a exp(-tau / xi) on A > 0."""
    tau, A = np.asarray(tau, dtype=float), np.asarray(A, dtype=float)
    ok = A > 0
    if ok.sum() < 2:
        raise InsufficientDataError("need two positive autocorrelator values for an exponential fit")
    slope, icept = np.polyfit(tau[ok], np.log(A[ok]), 1)
    xi = -1.0 / slope if slope < 0 else math.inf
    return float(xi), float(math.exp(icept))


def fit_power_law(tau, A) -> tuple[float, float]:
    """``(slope, amplitude)`` from a log-log fit of |A| against tau."""
    tau, A = np.asarray(tau, dtype=float), np.abs(np.asarray(A, dtype=float))
    ok = (A > 0) & (tau > 0)
    if ok.sum() < 2:
        raise InsufficientDataError("need two positive points for a power-law fit")
    slope, icept = np.polyfit(np.log(tau[ok]), np.log(A[ok]), 1)
    return float(slope), float(math.exp(icept))


def autocorrelator(trajs, quantity: str, t0: int, tau_grid, regime: str | None = None) -> CorrelationReport:
    """Late-time autocorrelator with the fit chosen by the run's regime.

    A power law (slope -2 Delta) is fitted at the critical point, an
    exponential (correlation length xi) elsewhere. The regime comes from
    ``classify_regime`` on the first trajectory unless given.
    """
    tau_grid = np.asarray(tau_grid, dtype=int)
    A = autocorrelation(trajs, quantity, t0, tau_grid)
    if np.all(A == 0):
        return CorrelationReport(tau_grid, A, None, None, "exponential", float("nan"), t0, quantity)
    regime = classify_regime(trajs[0]) if regime is None else regime
    if regime == "critical":
        slope, _ = fit_power_law(tau_grid, A)
        return CorrelationReport(tau_grid, A, None, -slope / 2, "power_law", slope, t0, quantity)
    xi, _ = fit_exponential(tau_grid, A)
    return CorrelationReport(tau_grid, A, xi, None, "exponential", -1.0 / xi, t0, quantity)


def scaling_relations_check(deltas: dict) -> tuple[float, float]:
    """Residuals of Delta[eps] = 2 Delta[K] - Delta[mu] and Delta[lambda] = Delta[mu] - Delta[K].

    Delta[lambda] defaults to 0 (lambda tends to a constant).
    """
    d_eps, d_k, d_mu = deltas["epsilon"], deltas["K"], deltas["mu"]
    d_lam = deltas.get("lambda", 0.0)
    return float(d_eps - (2 * d_k - d_mu)), float(d_lam - (d_mu - d_k))


# frame potentials ---------------------------------------------------------------------

def frame_potential_mc(samples, k: int = 2) -> tuple[float, float]:
    """``(F, SE)``: mean of |tr(U^dag U')|^(2k) over ordered pairs of distinct samples.

    The SE is the first-order U-statistic estimate, 2 sd(h1) / sqrt(N), with
    h1(i) the mean over partners of sample i, plus the pair-level term.
    """
    mats = np.stack([s.matrix if isinstance(s, UnitarySample) else np.asarray(s) for s in samples])
    N = mats.shape[0]
    if N < 2:
        raise InsufficientDataError("frame potential needs at least two samples")
    if not 1 <= k <= MAX_FRAME_ORDER:
        raise InvalidParameterError(f"order k must be in 1..{MAX_FRAME_ORDER}")
    flat = mats.reshape(N, -1)
    traces = flat.conj() @ flat.T  # tr(U_i^dag U_j)
    h = np.abs(traces) ** (2 * k)
    np.fill_diagonal(h, 0.0)
    value = float(h.sum() / (N * (N - 1)))
    h1 = (h.sum(axis=1) + h.sum(axis=0)) / (2 * (N - 1))
    off = h[~np.eye(N, dtype=bool)]
    var = 4 * np.var(h1, ddof=1) / N + 2 * np.var(off) / (N * (N - 1))
    return value, float(math.sqrt(var))


def frame_potential_haar(k: int) -> int:
    """k! for Haar on d >= k."""
    return math.factorial(k)


def frame_potential_rh_closed(k: int) -> tuple[Fraction, int]:
    """Exact restricted-Haar frame potential of order k and its lower bound (k + 1)!."""
    if not 0 <= k <= MAX_CLOSED_ORDER:
        raise InvalidParameterError(f"order k must be in 0..{MAX_CLOSED_ORDER}")
    total = Fraction(0)
    for k1 in range(k + 1):
        for k2 in range((k - k1) // 2 + 1):
            ways = Fraction(math.factorial(k),
                            math.factorial(k1) * math.factorial(k2) ** 2 * math.factorial(k - k1 - 2 * k2))
            total += ways * frame_potential_haar(k1 + k2)
    return total, math.factorial(k + 1)


def sample_ensemble(kind: str, d: int, count: int, rng) -> list[UnitarySample]:
    """Haar or restricted-Haar samples; the restricted ones share fixed in/out states."""
    rng = np.random.default_rng(rng)
    if kind == "haar":
        return [sample_haar_unitary(d, rng) for _ in range(count)]
    if kind == "restricted_haar":
        vin, vout = random_state(d, rng), random_state(d, rng)
        return [sample_restricted_haar(d, vin, vout, rng) for _ in range(count)]
    raise InvalidParameterError(f"unknown ensemble {kind!r}")


def critical_deltas(trajs, t0: int, tau_grid, quantities=("epsilon", "K", "mu")) -> dict:
    """Scaling dimensions from power-law fits of each quantity's autocorrelator."""
    return {q: autocorrelator(trajs, q, t0, tau_grid, regime="critical").delta for q in quantities}


def stack_quantity(trajs: list[Trajectory], key: str) -> np.ndarray:
    """Trajectories' ``key`` series as rows, truncated to the shortest."""
    n = min(len(tr) for tr in trajs)
    return np.stack([np.asarray(tr[key][:n], dtype=float) for tr in trajs])
