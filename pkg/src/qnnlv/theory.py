"""Closed forms: Lotka-Volterra solutions, Haar and restricted-Haar ensemble
averages, the linear-loss solution and the depolarizing-noise model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from qnnlv.errors import DegenerateSeriesError, DomainError, FitQualityError, InvalidParameterError
from qnnlv.training import DEAD_BAND


@dataclass(frozen=True)
class LVParams:
    eta: float
    lam: float
    C: float
    B: float
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def critical(self) -> bool:
        return self.C == 0.0


@dataclass(frozen=True)
class TheoryPrediction:
    quantity: str
    value: float
    regime: str
    form: str

    def as_dict(self) -> dict:
        return {"value": self.value, "regime": self.regime, "form": self.form}


def predictions_to_json(preds) -> dict:
    """Group predictions by quantity tag: ``{tag: {form: {...}}}``."""
    out: dict = {}
    for p in preds:
        out.setdefault(p.quantity, {})[p.form] = p.as_dict()
    return out


# Lotka-Volterra ---------------------------------------------------------------

def lv_trajectory(p: LVParams, t):
    """``(epsilon, K)`` of the closed-form LV solution at step(s) ``t``."""
    if p.eta <= 0:
        raise InvalidParameterError("eta must be positive")
    t = np.asarray(t, dtype=float)
    if p.C == 0.0:
        if p.B == 0:
            raise InvalidParameterError("B2 must be nonzero")
        denom = 2 * p.eta * t + 1.0 / p.B
        if np.any(denom <= 0) or (1.0 / p.B < 0):
            raise InvalidParameterError("critical solution has a pole at t >= 0")
        K = 2.0 / denom
        return K / (2 * p.lam), K
    if p.B > 0:
        # -2 + B e^{eta C t} = 0 at t* = ln(2/B)/(eta C)
        t_star = math.log(2.0 / p.B) / (p.eta * p.C)
        if t_star >= 0:
            raise InvalidParameterError(f"LV solution crosses a pole at t = {t_star:.4g}")
    growth = np.exp(p.eta * p.C * t)
    lam_eps = p.C / (-2.0 + p.B * growth)
    K = p.C / (1.0 - 2.0 / (p.B * growth))
    return lam_eps / p.lam, K


def lv_hamiltonian(epsilon, K, lam, eta):
    """H = eta (2 lambda eps - K), equal to -eta C and conserved along the flow."""
    epsilon, K = np.asarray(epsilon, dtype=float), np.asarray(K, dtype=float)
    if np.any(epsilon <= 0) or np.any(K <= 0):
        raise DomainError("Hamiltonian needs epsilon > 0 and K > 0")
    return eta * (2 * lam * epsilon - K)


def lv_canonical(epsilon, K, lam):
    """Canonical pair (Q, P) = (log 2 lambda eps, log K)."""
    epsilon, K = np.asarray(epsilon, dtype=float), np.asarray(K, dtype=float)
    if np.any(2 * lam * epsilon <= 0) or np.any(K <= 0):
        raise DomainError("canonical coordinates need 2 lambda eps > 0 and K > 0")
    return np.log(2 * lam * epsilon), np.log(K)


def lv_rhs(epsilon, K, lam, eta):
    """Right-hand side of the LV pair: d eps/dt = -eta eps K, dK/dt = -2 eta lambda eps K."""
    return -eta * epsilon * K, -2 * eta * lam * epsilon * K


def fit_lv(traj, window=None, critical: bool | None = None, c_tol: float | None = None) -> LVParams:
    """Fit the LV closed form over a window of a trajectory.

    C and lambda are window averages; only B is fitted, as the intercept of a
    log-linear form with the slope fixed by the theory. The residual norm and
    a free-slope rate are reported in ``meta``.
    """
    sl = traj.late_window() if window is None else window
    t = np.asarray(traj["t"][sl], dtype=float)
    eps = np.asarray(traj["epsilon"][sl], dtype=float)
    K = np.asarray(traj["K"][sl], dtype=float)
    lam_s = np.asarray(traj["lambda"][sl], dtype=float)
    C_s = np.asarray(traj["C"][sl], dtype=float)
    ok = np.isfinite(lam_s) & np.isfinite(C_s)
    if ok.sum() < 3:
        raise FitQualityError("window has fewer than 3 usable points")
    t, eps, K, lam_s, C_s = t[ok], eps[ok], K[ok], lam_s[ok], C_s[ok]
    eta = float(traj.meta["eta"])
    lam = float(np.mean(lam_s))
    C = float(np.mean(C_s))
    if c_tol is None:
        c_tol = DEAD_BAND * float(np.max(np.maximum(K, np.abs(2 * lam_s * eps))))
    if critical is None:
        critical = abs(C) <= c_tol
    if critical:
        y = 2.0 / K - 2 * eta * t
        inv_b = float(np.mean(y))
        if np.any(2 * eta * t + inv_b <= 0):
            raise FitQualityError("critical fit puts a pole inside the window")
        model = 2.0 / (2 * eta * t + inv_b)
        resid = np.linalg.norm(np.log(model) - np.log(K))
        signal = np.linalg.norm(np.log(K) - np.log(K).mean()) or 1.0
        slope = float(np.polyfit(np.log(t), np.log(K), 1)[0]) if np.all(t > 0) else float("nan")
        params = LVParams(eta, lam, 0.0, 1.0 / inv_b,
                          {"residual": float(resid), "relative_residual": float(resid / signal),
                           "loglog_slope_K": slope})
    else:
        if C > 0:
            # log(C/(lambda eps) + 2) = log B + eta C t
            z = C / (lam * eps) + 2.0
            y_obs = np.log(np.abs(z))
            log_b = float(np.mean(y_obs - eta * C * t))
            y_fit = log_b + eta * C * t
            B = math.exp(log_b)
            rate = float(-np.polyfit(t, np.log(np.abs(eps)), 1)[0])
        else:
            # log(1 - C/K) = log(2/B) - eta C t
            y_obs = np.log(1.0 - C / K)
            log2b = float(np.mean(y_obs + eta * C * t))
            y_fit = log2b - eta * C * t
            B = 2.0 / math.exp(log2b)
            rate = float(-np.polyfit(t, np.log(K), 1)[0])
        resid = np.linalg.norm(y_fit - y_obs)
        signal = np.linalg.norm(y_obs) or 1.0
        params = LVParams(eta, lam, C, B, {"residual": float(resid),
                                           "relative_residual": float(resid / signal),
                                           "fitted_rate": rate})
    if params.meta["relative_residual"] > 0.5:
        raise FitQualityError(f"LV fit residual {params.meta['relative_residual']:.2f} exceeds 50% of signal")
    return params


def linear_loss_solution(lam, eta, A, t):
    """``(epsilon, K)`` with 2 lambda eps = K = A exp(-2 eta lambda t)."""
    K = A * np.exp(-2 * eta * lam * np.asarray(t, dtype=float))
    return K / (2 * lam), K


# Haar ensemble -----------------------------------------------------------------

def _traces(obs_or_traces):
    if hasattr(obs_or_traces, "trace_powers"):
        t1, t2, t3, t4 = obs_or_traces.trace_powers
        return float(obs_or_traces.dim), t1, t2, t3, t4
    d, t1, t2, t3, t4 = obs_or_traces
    return float(d), t1, t2, t3, t4


def haar_averages(obs, L: int, O0: float) -> list[TheoryPrediction]:
    """Initial-time ensemble averages for Haar-random circuit blocks.

    ``obs`` is an Observable or a tuple ``(d, trO, trO2, trO3, trO4)``.
    """
    d, t1, t2, t3, t4 = _traces(obs)
    a2 = d * t2 - t1**2
    cubic = d * d * t3 - 3 * d * t2 * t1 + 2 * t1**3
    K0 = L * a2 / (2 * (d - 1) * (d + 1) ** 2)
    mu0 = L * (L - 1) * d * cubic / (8 * (d - 1) ** 2 * (d + 1) ** 3 * (d + 2))
    lam0 = (L - 1) * d * cubic / (4 * (d - 1) * (d + 1) * (d + 2) * a2)

    diag_bracket = ((d**4 - 2 * d**3 - 9 * d**2 + 8 * d + 20) * t1**4
                    + 2 * d * (-d**4 + d**3 + 10 * d**2 + d - 29) * t2 * t1**2
                    - 4 * (d**5 - 11 * d**3 - 6 * d**2 + 38 * d + 14) * t3 * t1
                    + (d**6 + 3 * d**5 - 11 * d**4 - 41 * d**3 + 18 * d**2 + 96 * d + 60) * t2**2
                    + d * (d**5 - 13 * d**3 - 4 * d**2 + 56 * d - 4) * t4)
    diag_den = 4 * d * (d - 1) * (d + 1) ** 2 * (d - 2) * (d + 2) ** 2 * (d - 3) * (d + 3) ** 2
    pair_bracket = (-2 * (d + 3) * O0 * t1**3 + 3 * d * (d + 3) * O0 * t1 * t2
                    + (d * d - d + 4) * t1 * t3 + d * (d - 1) * t4 - d * d * (d + 3) * O0 * t3
                    - 3 * (d - 1) * t2 * t1**2 - 3 * (d + 1) * t2**2 + 2 * t1**4)
    pair_den = 8 * (d - 1) ** 2 * (d + 1) ** 3 * (d + 2) * (d + 3)
    if d in (2.0, 3.0):
        # the single-parameter term has removable poles at d = 2, 3
        eps_mu0 = float("nan")
    else:
        eps_mu0 = -L * diag_bracket / diag_den + L * (L - 1) * d * pair_bracket / pair_den
    zeta0 = eps_mu0 / K0**2

    fourth = (d * d + 3 * d + 3) * t2**2 + d * (d + 1) * t4 + t1**4 - 2 * d * t2 * t1**2 - 4 * (d + 1) * t3 * t1
    var_K0 = (L * (L - 1) * d * fourth / (4 * (d - 1) ** 2 * (d + 1) ** 3 * (d + 2) * (d + 3))
              + L * 3 * fourth / (4 * (d - 1) * d * (d + 1) ** 2 * (d + 3) ** 2)
              - K0**2)
    sd_K0 = math.sqrt(var_K0) if var_K0 >= 0 else float("nan")

    # asymptotic (d >> 1, L >> 1) forms
    K0_a = L * a2 / (2 * d**3)
    mu0_a = L * L * cubic / (8 * d**5)
    lam0_a = L * cubic / (4 * d * d * a2)
    zeta0_a = (-(t1**4 - 2 * d * t2 * t1**2 - 4 * d * t3 * t1 + d * d * t2**2 + d * d * t4) / (L * a2**2)
               + (-2 * d * O0 * t1**3 + 3 * d * d * O0 * t1 * t2 + d * d * t1 * t3 + d * d * t4
                  - d**3 * O0 * t3 - 3 * d * t2 * t1**2 - 3 * d * t2**2 + 2 * t1**4) / (2 * a2**2))
    var_a = (3 * L / (4 * d**6) * (d * d * t2**2 - 2 * d * t2 * t1**2 + t1**4)
             + L * L / (4 * d**5) * (d * t4 - 4 * t3 * t1))
    sd_a = math.sqrt(var_a) if var_a >= 0 else float("nan")

    rows = [("K0", K0, K0_a), ("mu0", mu0, mu0_a), ("lambda0", lam0, lam0_a),
            ("eps_mu0", eps_mu0, zeta0_a * K0_a**2), ("zeta0", zeta0, zeta0_a),
            ("var_K0", var_K0, var_a), ("sd_K0", sd_K0, sd_a)]
    out = []
    for tag, exact, asym in rows:
        out.append(TheoryPrediction(tag, float(exact), "initial", "exact"))
        out.append(TheoryPrediction(tag, float(asym), "initial", "asymptotic"))
    return out


def xxz_haar_asymptotics(n: int, J: float, L: int) -> dict:
    """Leading-order XXZ values of the mean kernel and relative dQNTK."""
    d = 2.0**n
    return {"K0": (1 + J * J) * L * n / d, "lambda0": 3 * J * (1 - J * J) * L / (4 * (1 + J * J) * d)}


def prediction_map(preds, form: str = "exact") -> dict:
    return {p.quantity: p.value for p in preds if p.form == form}


# restricted Haar ensemble --------------------------------------------------------

def remaining_error(O0: float, o_min: float = 0.0, o_max: float = 1.0, projector: bool = True) -> float:
    """Unreachable part R of the target.

    Projector targets can only be approached from below, so R = min(1 - O0, 0);
    for a generic observable R = max(O_min - O0, 0).
    """
    if projector:
        return min(1.0 - O0, 0.0)
    return max(o_min - O0, 0.0)


def restricted_haar_averages(L: int, d: int, O0: float, kappa: float = 0.0) -> list[TheoryPrediction]:
    """Late-time ensemble averages for a projector observable.

    ``kappa`` optionally offsets the fidelity, F0 = O0 + R - kappa, which keeps
    the dynamical index finite just above O0 = 1.
    """
    if O0 < 0:
        raise DomainError("restricted-Haar averages need O0 >= 0")
    R = remaining_error(O0)
    F0 = O0 + R - kappa
    d = float(d)
    regime = "frozen_kernel" if O0 < 1 else ("critical" if O0 == 1 else "frozen_error")
    K = L * d * F0 * (1 - F0) / (2 * (d * d - 1))
    pair = d * d * F0 * (F0 - 1) * (2 * F0 - 1) / (8 * (d * d - 1) ** 2)
    diag = (d + 2) * (F0 - 1) * F0 * ((d + 2) * F0 - 2) / (4 * (d - 1) * (d + 1) * (d + 3))
    mu = L * (L - 1) * pair + L * diag
    lam = (L - 1) * d * (1 - 2 * F0) / (4 * (d * d - 1)) - (d + 2) * ((d + 2) * F0 - 2) / (2 * d * (d + 3))

    gap = F0 - O0  # equals R - kappa
    ratio = _ratio(gap, F0 - 1.0)
    if F0 == 0.0:
        zeta = float("nan")
    else:
        zeta = ((L - 1) / (2 * L) * (2 * F0 - 1) / F0
                + (d + 2) * (d * d - 1) * ((d + 2) * F0 - 2) / (L * d * d * (d + 3) * F0)) * ratio
    K_a = L / (2 * d) * F0 * (1 - F0)
    lam_a = L / (4 * d) * (1 - 2 * F0) - F0 / 2
    zeta_a = (1 - 1 / (2 * F0) + d / L) * ratio if F0 else float("nan")
    mu_a = L * L * F0 * (F0 - 1) * (2 * F0 - 1) / (8 * d * d) + L * (F0 - 1) * F0 * F0 / (4 * d)

    out = []
    for tag, exact, asym in (("K_inf", K, K_a), ("mu_inf", mu, mu_a), ("lambda_inf", lam, lam_a),
                             ("zeta_inf", zeta, zeta_a)):
        out.append(TheoryPrediction(tag, float(exact), regime, "exact"))
        out.append(TheoryPrediction(tag, float(asym), regime, "asymptotic"))
    out.append(TheoryPrediction("F0", float(F0), regime, "exact"))
    out.append(TheoryPrediction("R", float(R), regime, "exact"))
    return out


def _ratio(num: float, den: float) -> float:
    """num / den, taking the O0 = 1 limit (both vanish together) as 1."""
    if den == 0.0:
        if num == 0.0:
            return 1.0
        # F0 -> 1 from below while O0 > 1
        return math.inf if num < 0 else -math.inf
    return num / den


# depolarizing noise -------------------------------------------------------------

def depolarize_error(epsilon_ideal, p: float, O0: float):
    """(1 - p) eps_ideal - p O0, for a traceless observable."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p = {p} outside [0, 1]")
    return (1.0 - p) * np.asarray(epsilon_ideal, dtype=float) - p * O0


def estimate_p(ideal, observed, O0: float) -> float:
    """Closed-form least-squares depolarizing strength."""
    ideal = np.asarray(ideal, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if ideal.shape != observed.shape or ideal.ndim != 1 or ideal.size < 2:
        raise DegenerateSeriesError("need two equal-length series with at least 2 points")
    shifted = ideal + O0
    denom = float(shifted @ shifted)
    if denom <= 0.0:
        raise DegenerateSeriesError("ideal + O0 is identically zero")
    return float((ideal - observed) @ shifted / denom)
