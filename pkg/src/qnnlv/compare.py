"""Late-window comparison of simulated trajectories against fitted LV theory."""

from __future__ import annotations

import math

import numpy as np

from qnnlv.errors import AlignmentError
from qnnlv.theory import LVParams, lv_trajectory

DEFAULT_TOLERANCES = {"rate": 0.10, "slope": 0.10, "plateau": 0.01, "curve": 0.25}


def lv_section(params: LVParams, regime: str, window, R: float | None = None) -> dict:
    """The ``lv`` block of theory.json: fitted constants plus the predicted rate or slope."""
    block = {"eta": params.eta, "lambda": params.lam, "C": params.C, "B": params.B,
             "regime": regime, "window": [int(window[0]), int(window[1])], **params.meta}
    if regime == "critical":
        block["slope_K"] = -1.0
    elif params.C > 0:
        block["rate_epsilon"] = params.eta * params.C
    else:
        block["rate_K"] = -params.eta * params.C
        block["plateau"] = -params.C / (2 * params.lam) if R is None else R
    return block


def _shifted(p: LVParams, t0: float) -> LVParams:
    """Same solution with the time origin moved to ``t0``."""
    if p.C == 0.0:
        return LVParams(p.eta, p.lam, 0.0, 1.0 / (1.0 / p.B + 2 * p.eta * t0))
    return LVParams(p.eta, p.lam, p.C, p.B * math.exp(p.eta * p.C * t0))


def _window(traj, lo: int, hi: int) -> np.ndarray:
    t = np.asarray(traj["t"])
    if t.size == 0 or t[-1] < hi or t[0] > lo:
        raise AlignmentError(f"trajectory covers [{int(t[0]) if t.size else 0}, {int(t[-1]) if t.size else 0}],"
                             f" window is [{lo}, {hi}]")
    mask = (t >= lo) & (t <= hi)
    if mask.sum() < 2:
        raise AlignmentError(f"window [{lo}, {hi}] holds fewer than 2 records")
    return mask


def _entry(predicted, observed, tol, relative=True) -> dict:
    dev = abs(observed - predicted) / abs(predicted) if relative else abs(observed - predicted)
    return {"predicted": predicted, "observed": observed, "deviation": dev,
            "relative": relative, "tolerance": tol, "pass": bool(dev <= tol)}


def compare_trajectory(traj, lv: dict, tolerances: dict | None = None) -> dict:
    """Per-quantity deviations of one trajectory from the ``lv`` block over its window."""
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    lo, hi = (int(v) for v in lv["window"])
    if hi <= lo:
        raise AlignmentError(f"empty window [{lo}, {hi}]")
    mask = _window(traj, lo, hi)
    t = np.asarray(traj["t"], dtype=float)[mask]
    eps = np.asarray(traj["epsilon"], dtype=float)[mask]
    K = np.asarray(traj["K"], dtype=float)[mask]
    out = {}
    if lv["regime"] == "critical":
        slope = float(np.polyfit(np.log(t), np.log(K), 1)[0])
        out["slope_K"] = _entry(lv["slope_K"], slope, tol["slope"], relative=False)
    elif "rate_epsilon" in lv:
        rate = float(-np.polyfit(t, np.log(np.abs(eps)), 1)[0])
        out["rate_epsilon"] = _entry(lv["rate_epsilon"], rate, tol["rate"])
    else:
        rate = float(-np.polyfit(t, np.log(K), 1)[0])
        out["rate_K"] = _entry(lv["rate_K"], rate, tol["rate"])
        out["plateau"] = _entry(lv["plateau"], float(eps[-1]), tol["plateau"])
    params = _shifted(LVParams(lv["eta"], lv["lambda"], lv["C"], lv["B"]), lo)
    _, K_model = lv_trajectory(params, t - lo)
    curve = float(np.median(np.abs(K - K_model) / np.abs(K_model)))
    out["curve_K"] = {"predicted": 0.0, "observed": curve, "deviation": curve, "relative": False,
                      "tolerance": tol["curve"], "pass": bool(curve <= tol["curve"])}
    return out


def compare(trajs, theory: dict, tolerances: dict | None = None) -> dict:
    """compare.json content: per-trajectory entries and an overall verdict."""
    if "lv" not in theory:
        raise AlignmentError("theory file has no fitted 'lv' block to compare against")
    per = [compare_trajectory(tr, theory["lv"], tolerances) for tr in trajs]
    return {"window": theory["lv"]["window"], "regime": theory["lv"]["regime"],
            "trajectories": per, "pass": all(e["pass"] for rep in per for e in rep.values())}
