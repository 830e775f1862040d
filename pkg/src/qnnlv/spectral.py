"""Loss Hessian at late time, its spectrum and gap.

The effective imaginary-time generator of the late-time dynamics is similar
to the loss Hessian, so the eigenvalues of M = g g^T + eps H_obs are used
directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from qnnlv.circuit import Circuit
from qnnlv.errors import NumericError
from qnnlv.training import LossSpec, gradient_with_value, observable_hessian, train

RANK_THRESHOLD = 1e-3


@dataclass(frozen=True)
class HessianReport:
    eigenvalues: np.ndarray
    gap: float
    rank_epsilon: int
    epsilon: float = float("nan")
    K: float = float("nan")
    asymmetry: float = 0.0

    @property
    def top(self) -> float:
        return float(self.eigenvalues[0])


def hessian(circuit: Circuit, theta, obs, loss: LossSpec, return_parts: bool = False):
    """M = g g^T + eps H_obs for the quadratic loss."""
    if loss.kind != "quadratic":
        raise ValueError("the loss Hessian is defined for the quadratic loss")
    expval, g = gradient_with_value(circuit, theta, obs)
    eps = expval - loss.O0
    h_obs = observable_hessian(circuit, theta, obs)
    m = np.outer(g, g) + eps * h_obs
    if return_parts:
        return m, g, eps
    return m


def hessian_gap(m: np.ndarray, epsilon: float = float("nan"), K: float = float("nan"),
                threshold: float = RANK_THRESHOLD) -> HessianReport:
    """Descending spectrum, top-two gap and numerical rank of a Hessian."""
    m = np.asarray(m, dtype=float)
    scale = np.max(np.abs(m)) or 1.0
    asym = float(np.max(np.abs(m - m.T)) / scale)
    sym = 0.5 * (m + m.T)
    try:
        w = scipy.linalg.eigh(sym, eigvals_only=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"eigensolve failed: {exc}") from exc
    w = w[::-1]
    gap = float(w[0] - w[1]) if w.size > 1 else float(w[0])
    rank = int(np.sum(w > threshold * w[0])) if w[0] > 0 else 0
    return HessianReport(w, gap, rank, float(epsilon), float(K), asym)


def late_time_report(circuit: Circuit, obs, loss: LossSpec, eta: float, steps: int, rng=None,
                     grad_tol: float = 1e-6, record_stride: int = 10):
    """Train until converged (or out of budget), then analyse the Hessian there."""
    traj = train(circuit, obs, loss, eta=eta, T=steps, record_stride=record_stride,
                 mu_stride=record_stride, rng=rng, stop_grad_tol=grad_tol)
    m, g, eps = hessian(circuit, traj.theta_final, obs, loss, return_parts=True)
    return hessian_gap(m, eps, float(g @ g)), traj
