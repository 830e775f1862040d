"""Gradient-descent training with exact first and second derivatives.

All derivatives are of the expectation value <O>; the error is a constant
shift of it, so d(epsilon)/d(theta) = d<O>/d(theta) for both loss kinds.
Rotation generators are unit-weight Pauli words, so P^2 = I throughout.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from qnnlv.circuit import Circuit, apply, as_generator, random_theta
from qnnlv.errors import DivergenceError, InsufficientDataError, ResourceError
from qnnlv.pauli import Observable

log = logging.getLogger(__name__)

DQNTK_MAX_L = 1024
K_FLOOR = 1e-14
LATE_FRACTION = 0.2
DEAD_BAND = 0.2
COLUMNS = ("t", "epsilon", "K", "mu", "lambda", "zeta", "C", "loss", "mu_fresh")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "quadratic"
    O0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("quadratic", "linear"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "quadratic" and not math.isfinite(self.O0):
            raise ValueError("quadratic loss needs a finite O0")

    def error(self, expval: float, obs: Observable) -> float:
        if self.kind == "quadratic":
            return expval - self.O0
        return expval - obs.o_min

    def value(self, expval: float, obs: Observable) -> float:
        if self.kind == "quadratic":
            return 0.5 * (expval - self.O0) ** 2
        return expval


def gradient_with_value(circuit: Circuit, theta, obs: Observable, psi0=None) -> tuple[float, np.ndarray]:
    """``(<O>, d<O>/d theta)`` by one forward and one backward sweep."""
    theta = circuit.check_theta(theta)
    psi = apply(circuit, theta, psi0)
    o_psi = obs.apply(psi)
    expval = float(np.vdot(psi, o_psi).real)
    stack = np.stack([psi, o_psi], axis=1)
    grad = np.empty(circuit.L)
    for l in range(circuit.L - 1, -1, -1):
        stack = circuit.fixed_gate(l, stack, adjoint=True)
        p = circuit.pauli(l, stack)
        grad[l] = np.vdot(stack[:, 1], p[:, 0]).imag
        c, s = math.cos(theta[l] / 2), math.sin(theta[l] / 2)
        stack = c * stack + 1j * s * p
    return expval, grad


def gradient(circuit: Circuit, theta, obs: Observable, psi0=None) -> np.ndarray:
    """Exact d<O>/d theta (adjoint method, O(L) gate applications)."""
    return gradient_with_value(circuit, theta, obs, psi0)[1]


def hessian_vector_product(circuit: Circuit, theta, obs: Observable, v, psi0=None) -> np.ndarray:
    """``H v`` for the Hessian ``H`` of <O>: tangent propagation through both sweeps."""
    theta = circuit.check_theta(theta)
    v = np.asarray(v, dtype=float)
    fwd = np.zeros((circuit.dim, 2), dtype=complex)
    fwd[:, 0] = circuit.initial_state() if psi0 is None else psi0
    for l in range(circuit.L):
        c, s = math.cos(theta[l] / 2), math.sin(theta[l] / 2)
        p = circuit.pauli(l, fwd)
        p_rot = c * p[:, 0] - 1j * s * fwd[:, 0]  # P V psi
        fwd = c * fwd - 1j * s * p
        fwd[:, 1] += (-0.5j * v[l]) * p_rot
        fwd = circuit.fixed_gate(l, fwd)
    psi, dpsi = fwd[:, 0], fwd[:, 1]
    stack = np.stack([psi, obs.apply(psi), dpsi, obs.apply(dpsi)], axis=1)
    out = np.empty(circuit.L)
    for l in range(circuit.L - 1, -1, -1):
        stack = circuit.fixed_gate(l, stack, adjoint=True)
        p = circuit.pauli(l, stack)
        out[l] = (np.vdot(stack[:, 3], p[:, 0]) + np.vdot(stack[:, 1], p[:, 2])).imag
        c, s = math.cos(theta[l] / 2), math.sin(theta[l] / 2)
        p_phi = c * p[:, 0] + 1j * s * stack[:, 0]  # P V^dag phi
        p_lam = c * p[:, 1] + 1j * s * stack[:, 1]
        stack = c * stack + 1j * s * p
        stack[:, 2] += (0.5j * v[l]) * p_phi
        stack[:, 3] += (0.5j * v[l]) * p_lam
    return out


def qntk(circuit: Circuit, theta, obs: Observable, loss: LossSpec | None = None) -> float:
    """K = sum of squared error derivatives (same for both loss kinds)."""
    g = gradient(circuit, theta, obs)
    return float(g @ g)


def dqntk(circuit: Circuit, theta, obs: Observable) -> float:
    """mu = g^T H g with H the Hessian of <O>."""
    if circuit.L > DQNTK_MAX_L:
        raise ResourceError(f"L={circuit.L} exceeds dQNTK cap {DQNTK_MAX_L}")
    g = gradient(circuit, theta, obs)
    return float(g @ hessian_vector_product(circuit, theta, obs, g))


def observable_hessian(circuit: Circuit, theta, obs: Observable) -> np.ndarray:
    """Full L x L Hessian of <O>.

    Built from the state-derivative matrix D (columns d psi / d theta_k)
    and the adjoint vectors lambda_m = U_{m+}^dag O psi:
    H[k, m] = 2 Re <D_k|O|D_m> + Im <lambda_m| P_m |M_k^(m)> for k < m, where
    M_k^(m) is the k-th derivative state propagated up to slot m.
    """
    theta = circuit.check_theta(theta)
    L, d = circuit.L, circuit.dim
    if L > DQNTK_MAX_L:
        raise ResourceError(f"L={L} exceeds Hessian cap {DQNTK_MAX_L}")
    psi = apply(circuit, theta)
    expval = float(np.vdot(psi, obs.apply(psi)).real)
    # adjoint vectors, each taken right after rotation l and before fixed gate l
    lam = np.empty((L, d), dtype=complex)
    cur = obs.apply(psi)
    for l in range(L - 1, -1, -1):
        cur = circuit.fixed_gate(l, cur, adjoint=True)
        lam[l] = cur
        cur = circuit.rotate(l, theta[l], cur, adjoint=True)
    cross = np.zeros((L, L))
    mats = np.zeros((d, L), dtype=complex)
    state = circuit.initial_state()
    for l in range(L):
        state = circuit.rotate(l, theta[l], state)
        if l:
            mats[:, :l] = circuit.rotate(l, theta[l], mats[:, :l])
            p_lam = circuit.pauli(l, lam[l])
            cross[:l, l] = (p_lam.conj() @ mats[:, :l]).imag
        mats[:, l] = -0.5j * circuit.pauli(l, state)
        state = circuit.fixed_gate(l, state)
        mats[:, : l + 1] = circuit.fixed_gate(l, mats[:, : l + 1])
    gram = 2.0 * (mats.conj().T @ obs.apply(mats)).real
    hess = gram + cross + cross.T
    hess[np.diag_indices(L)] -= 0.5 * expval
    return hess


@dataclass
class Trajectory:
    """Recorded diagnostics; ``data`` maps each CSV column to an array."""

    data: dict
    theta_final: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.data["t"])

    def __getitem__(self, key: str) -> np.ndarray:
        return self.data[key]

    def records(self):
        for i in range(len(self)):
            yield {k: self.data[k][i] for k in COLUMNS}

    def late_window(self, fraction: float = LATE_FRACTION) -> slice:
        n = len(self)
        start = n - max(int(round(fraction * n)), 1)
        return slice(start, n)

    def window(self, key: str, fraction: float = LATE_FRACTION) -> np.ndarray:
        return self.data[key][self.late_window(fraction)]


def derived_diagnostics(eps, K, mu):
    """lambda, zeta and C; NaN where K is below the floor."""
    eps, K, mu = map(np.asarray, (eps, K, mu))
    ok = K > K_FLOOR
    safe = np.where(ok, K, 1.0)
    lam = np.where(ok, mu / safe, np.nan)
    zeta = np.where(ok, eps * mu / safe**2, np.nan)
    C = np.where(ok, K - 2 * lam * eps, np.nan)
    return lam, zeta, C


def train(circuit: Circuit, obs: Observable, loss: LossSpec, eta: float = 1e-3, T: int = 1000,
          record_stride: int = 1, mu_stride: int = 10, rng=None, theta0=None,
          stop_grad_tol: float | None = None, guard: float = 10.0, meta: dict | None = None) -> Trajectory:
    """Vanilla gradient descent on the loss, recording diagnostics.

    Quadratic loss steps ``theta -= eta * eps * g``; linear loss steps
    ``theta -= eta * g``. mu is evaluated on recorded steps whose index is a
    multiple of ``mu_stride`` and held in between. With ``stop_grad_tol`` the
    run stops once the loss-gradient norm falls below ``stop_grad_tol * sqrt(K)``.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if T < 0 or record_stride < 1 or mu_stride < 1:
        raise ValueError("T, record_stride and mu_stride must be positive")
    if mu_stride % record_stride:
        raise ValueError("mu_stride must be a multiple of record_stride")
    if loss.kind == "quadratic" and obs.kind == "pauli_sum" and obs.dim <= 4096:
        if loss.O0 >= obs.o_max:
            warnings.warn("O0 >= O_max breaks the symmetry assumption of the theory", stacklevel=2)
    theta = random_theta(circuit.L, as_generator(rng)) if theta0 is None else np.array(theta0, dtype=float)
    theta = circuit.check_theta(theta)

    rows = {k: [] for k in ("t", "epsilon", "K", "mu", "loss", "mu_fresh")}
    mu_last = float("nan")
    eps0 = None
    info = dict(meta or {})
    info.update(eta=eta, T=T, record_stride=record_stride, mu_stride=mu_stride, loss=loss.kind,
                O0=loss.O0, ansatz=circuit.ansatz, n=circuit.n, L=circuit.L,
                circuit_seed=circuit.seed, theta_init="uniform[0,2pi)")

    def finish(stopped_at):
        data = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
        data["t"] = data["t"].astype(int)
        data["mu_fresh"] = data["mu_fresh"].astype(int)
        data["lambda"], data["zeta"], data["C"] = derived_diagnostics(data["epsilon"], data["K"], data["mu"])
        info["steps_run"] = stopped_at
        return Trajectory(data, theta.copy(), info)

    for t in range(T + 1):
        expval, g = gradient_with_value(circuit, theta, obs)
        eps = loss.error(expval, obs)
        K = float(g @ g)
        if eps0 is None:
            eps0 = eps
        elif abs(eps) > guard * max(abs(eps0), 1e-12):
            partial = finish(t)
            raise DivergenceError(f"|epsilon| grew past {guard}x its initial value at step {t}", partial)
        step_grad = abs(eps) * math.sqrt(K) if loss.kind == "quadratic" else math.sqrt(K)
        done = t == T or (stop_grad_tol is not None and step_grad < stop_grad_tol * math.sqrt(max(K, 0.0)))
        if t % record_stride == 0 or done:
            fresh = t % mu_stride == 0 or done
            if fresh:
                mu_last = float(g @ hessian_vector_product(circuit, theta, obs, g))
            rows["t"].append(t)
            rows["epsilon"].append(eps)
            rows["K"].append(K)
            rows["mu"].append(mu_last)
            rows["loss"].append(loss.value(expval, obs))
            rows["mu_fresh"].append(int(fresh))
        if done:
            return finish(t)
        scale = eps if loss.kind == "quadratic" else 1.0
        theta = theta - eta * scale * g
    return finish(T)


def late_tolerance(traj: Trajectory, fraction: float = LATE_FRACTION) -> float:
    """Dead-band for C: a fixed fraction of the larger of K and |2 lambda eps| over the window.

    Since C = K (1 - 2 zeta), this marks zeta in roughly [0.4, 0.625] as critical.
    """
    K = traj.window("K", fraction)
    two_le = np.abs(2 * traj.window("lambda", fraction) * traj.window("epsilon", fraction))
    scale = np.nanmax(np.maximum(K, two_le))
    return DEAD_BAND * float(scale)


def classify_regime(traj: Trajectory, obs: Observable | None = None) -> str:
    """frozen_kernel, critical or frozen_error from the sign of the late-time C."""
    if len(traj) < 10:
        raise InsufficientDataError("need at least 10 recorded steps to classify")
    C = traj.window("C")
    C = C[np.isfinite(C)]
    if C.size < 2:
        raise InsufficientDataError("late window has no finite C values")
    c_tol = late_tolerance(traj)
    mean_c = float(np.mean(C))
    if mean_c > c_tol:
        return "frozen_kernel"
    if mean_c < -c_tol:
        return "frozen_error"
    return "critical"
