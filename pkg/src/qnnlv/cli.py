"""``qnnlv <command> --config FILE [--set key=value]... [--jobs N]``.

Exit codes: 0 success, 1 other library error, 2 configuration error,
3 resource cap exceeded, 4 divergence (partial outputs are kept).
"""

from __future__ import annotations

import argparse
import glob
import logging
import sys
from pathlib import Path

import numpy as np

from qnnlv import __version__
from qnnlv.compare import DEFAULT_TOLERANCES, compare, lv_section
from qnnlv.config import COMMANDS, load_config, parse_grid, parse_target
from qnnlv.errors import ConfigError, DivergenceError, FitQualityError, InsufficientDataError, QnnlvError
from qnnlv.experiment import Experiment
from qnnlv.output import RunWriter, read_json, read_trajectory
from qnnlv.spectral import late_time_report
from qnnlv.stats import (autocorrelator, frame_potential_haar, frame_potential_mc, frame_potential_rh_closed,
                         run_ensemble, sample_ensemble, scaling_relations_check, stack_quantity)
from qnnlv.theory import (LVParams, estimate_p, fit_lv, haar_averages, lv_trajectory, predictions_to_json,
                          remaining_error, restricted_haar_averages)
from qnnlv.training import LossSpec, classify_regime

log = logging.getLogger("qnnlv")


def _opt(cfg, section: str, key: str, default=None, cast=str):
    raw = cfg.section(section).get(key)
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {cast.__name__}") from None


def _theory_block(exp: Experiment) -> dict:
    """Initial-time Haar predictions (RPA) and late-time restricted-Haar ones (projector)."""
    kind, size = exp.ansatz
    obs = exp.observable
    out = {"observable": obs.label, "O0": exp.O0, "O_min": obs.o_min, "O_max": obs.o_max}
    if kind == "rpa" and exp.loss.kind == "quadratic":
        out["haar_initial"] = predictions_to_json(haar_averages(obs, size, exp.O0))
    if obs.kind == "projector" and exp.O0 >= 0:
        out["restricted_haar_late"] = predictions_to_json(restricted_haar_averages(exp.n_params, obs.dim, exp.O0))
    return out


def _residual(exp: Experiment) -> float:
    if exp.observable.kind == "projector":
        return remaining_error(exp.O0)
    return max(exp.observable.o_min - exp.O0, 0.0)


def _fit_block(traj, exp: Experiment) -> dict:
    """Regime and LV fit for one trajectory; a failed fit is reported, not raised."""
    try:
        regime = classify_regime(traj)
    except InsufficientDataError as exc:
        return {"regime": None, "error": str(exc)}
    sl = traj.late_window()
    t = traj["t"][sl]
    try:
        params = fit_lv(traj, sl, critical=regime == "critical")
    except FitQualityError as exc:
        return {"regime": regime, "error": str(exc), "window": [int(t[0]), int(t[-1])]}
    return lv_section(params, regime, (t[0], t[-1]), _residual(exp))


def _overlay(writer: RunWriter, traj, lv: dict, suffix: str = "") -> None:
    """Two-column simulation-vs-theory series over the fit window."""
    if "B" not in lv:
        return
    lo, hi = lv["window"]
    mask = (traj["t"] >= lo) & (traj["t"] <= hi)
    t = traj["t"][mask].astype(float)
    p = LVParams(lv["eta"], lv["lambda"], lv["C"], lv["B"])
    # move the time origin to the window start so early poles do not matter
    if p.C == 0:
        p = LVParams(p.eta, p.lam, 0.0, 1.0 / (1.0 / p.B + 2 * p.eta * lo))
    else:
        p = LVParams(p.eta, p.lam, p.C, p.B * np.exp(p.eta * p.C * lo))
    try:
        eps_th, K_th = lv_trajectory(p, t - lo)
    except QnnlvError as exc:
        log.warning("no overlay: %s", exc)
        return
    writer.series(f"overlay_epsilon{suffix}.csv", {"t": traj["t"][mask], "simulation": traj["epsilon"][mask],
                                                    "theory": eps_th})
    writer.series(f"overlay_K{suffix}.csv", {"t": traj["t"][mask], "simulation": traj["K"][mask], "theory": K_th})


def cmd_train(cfg, writer: RunWriter) -> int:
    exp = Experiment(cfg)
    exp.check_resources()
    theory = _theory_block(exp)
    writer.json("theory.json", theory)
    try:
        traj = exp.run_trajectory(0)
    except DivergenceError as exc:
        writer.trajectory(0, exc.partial)
        writer.json("summary.json", {"status": "diverged", "error": str(exc), "failed_seeds": [cfg.master_seed]})
        raise
    writer.trajectory(0, traj)
    fit = _fit_block(traj, exp)
    theory["lv"] = fit
    writer.json("theory.json", theory)
    _overlay(writer, traj, fit)
    final = {k: traj[k][-1] for k in ("t", "epsilon", "K", "mu", "lambda", "zeta", "C")}
    writer.json("summary.json", {"status": "ok", "final": final, "regime": fit.get("regime"),
                                 "steps_run": traj.meta["steps_run"]})
    return 0


def _ensemble_outputs(cfg, writer: RunWriter, result, exp: Experiment) -> dict:
    for tr in result.trajectories:
        writer.trajectory(tr.meta["index"], tr)
    for f in result.failed:
        if f["partial"] is not None:
            writer.trajectory(f["index"], f["partial"])
    summary = {"status": "partial" if result.failed else "ok",
               "n_trajectories": len(result.trajectories),
               "summaries": [s.as_dict() for s in result.summaries],
               "failed_seeds": [{"index": f["index"], "seed": f["seed"], "error": f["error"]} for f in result.failed]}
    if result.trajectories:
        n = stack_quantity(result.trajectories, "t").shape[1]
        mean = {"t": result.trajectories[0]["t"][:n]}
        for key in ("epsilon", "K", "mu"):
            mean[key] = stack_quantity(result.trajectories, key).mean(axis=0)
        writer.series("ensemble_mean.csv", mean)
    writer.json("theory.json", _theory_block(exp))
    return summary


def cmd_ensemble(cfg, writer: RunWriter) -> int:
    exp = Experiment(cfg)
    result = run_ensemble(cfg)
    summary = _ensemble_outputs(cfg, writer, result, exp)
    if result.trajectories:
        preds = _theory_block(exp)
        overlay = {}
        for tag, key in (("K_0", "K0"), ("mu_0", "mu0"), ("lambda_bar_0", "lambda0"), ("zeta_bar_0", "zeta0")):
            if "haar_initial" in preds and key in preds["haar_initial"]:
                overlay[tag] = {"simulation": result.summary(tag).mean,
                                "theory": preds["haar_initial"][key]["exact"]["value"]}
        summary["initial_vs_haar"] = overlay
    writer.json("summary.json", summary)
    if result.failed:
        raise DivergenceError(f"{len(result.failed)} of {cfg.trajectories} trajectories diverged")
    return 0


def cmd_theory(cfg, writer: RunWriter) -> int:
    exp = Experiment(cfg)
    block = _theory_block(exp)
    grid = _opt(cfg, "theory", "o0_grid")
    if grid is not None:
        rows = []
        for O0 in parse_grid(grid):
            row = {"O0": O0}
            if exp.observable.kind == "projector":
                for p in restricted_haar_averages(exp.n_params, exp.observable.dim, O0):
                    if p.form == "exact":
                        row[p.quantity] = p.value
            else:
                for p in haar_averages(exp.observable, exp.n_params, O0):
                    if p.form == "exact":
                        row[p.quantity] = p.value
            rows.append(row)
        keys = list(rows[0])
        writer.series("theory_sweep.csv", {k: [r[k] for r in rows] for k in keys})
        block["sweep"] = rows
    writer.json("theory.json", block)
    writer.json("summary.json", {"status": "ok"})
    return 0


def cmd_hessian_sweep(cfg, writer: RunWriter) -> int:
    exp = Experiment(cfg)
    exp.check_resources()
    obs = exp.observable
    offsets = parse_grid(_opt(cfg, "sweep", "offsets", "-1.5:1.5:7"))
    grad_tol = _opt(cfg, "sweep", "grad_tol", 1e-6, float)
    rows, points = [], []
    for i, off in enumerate(offsets):
        O0 = obs.o_min + float(off)
        rng = np.random.default_rng(cfg.master_seed)
        circ = exp.circuit(rng)
        rep, traj = late_time_report(circ, obs, LossSpec("quadratic", O0), cfg.eta, cfg.steps, rng,
                                     grad_tol=grad_tol, record_stride=cfg.record_stride)
        writer.csv(f"spectrum_{i}.csv", ("index", "eigenvalue"), enumerate(rep.eigenvalues))
        rows.append((O0, rep.gap, rep.rank_epsilon))
        points.append({"O0": O0, "gap": rep.gap, "rank_epsilon": rep.rank_epsilon, "top": rep.top,
                       "K": rep.K, "epsilon": rep.epsilon, "steps_run": traj.meta["steps_run"]})
    writer.csv("gap_sweep.csv", ("O0", "gap", "rank_epsilon"), rows)
    best = min(points, key=lambda p: p["gap"])
    writer.json("summary.json", {"status": "ok", "O_min": obs.o_min, "points": points, "gap_min_O0": best["O0"]})
    return 0


def cmd_framepot(cfg, writer: RunWriter) -> int:
    kind = _opt(cfg, "framepot", "ensemble", "haar")
    d = _opt(cfg, "framepot", "d", 4, int)
    count = _opt(cfg, "framepot", "samples", 2000, int)
    k = _opt(cfg, "framepot", "k", 2, int)
    samples = sample_ensemble(kind, d, count, cfg.master_seed)
    value, se = frame_potential_mc(samples, k)
    closed, bound = frame_potential_rh_closed(k)
    expected = float(closed) if kind == "restricted_haar" else float(frame_potential_haar(k))
    writer.json("theory.json", {"ensemble": kind, "k": k, "value": expected, "rh_closed": closed,
                                "rh_lower_bound": bound, "haar": frame_potential_haar(k)})
    writer.json("summary.json", {"status": "ok", "ensemble": kind, "d": d, "samples": count, "k": k,
                                 "frame_potential": value, "se": se,
                                 "within_3se": bool(abs(value - expected) <= 3 * se)})
    return 0


def cmd_autocorr(cfg, writer: RunWriter) -> int:
    exp = Experiment(cfg)
    result = run_ensemble(cfg)
    summary = _ensemble_outputs(cfg, writer, result, exp)
    if not result.trajectories:
        writer.json("summary.json", summary)
        raise DivergenceError("every trajectory diverged")
    t0 = _opt(cfg, "autocorr", "t0", 0, int)
    taus = parse_grid(_opt(cfg, "autocorr", "tau", f"{cfg.record_stride}:{cfg.steps // 2}:10"))
    stride = cfg.record_stride
    taus = np.unique((np.round(taus / stride) * stride).astype(int))
    quantities = [q.strip() for q in _opt(cfg, "autocorr", "quantities", "epsilon,K,mu").split(",")]
    regime = _opt(cfg, "autocorr", "regime") or classify_regime(result.trajectories[0])
    reports = {}
    for q in quantities:
        rep = autocorrelator(result.trajectories, q, t0, taus, regime=regime)
        writer.csv(f"autocorr_{q}.csv", ("tau", "A"), zip(rep.tau_grid, rep.A_values))
        reports[q] = {"fit_kind": rep.fit_kind, "xi": rep.xi, "delta": rep.delta, "slope": rep.slope}
    summary["autocorr"] = {"t0": t0, "regime": regime, "reports": reports}
    if regime == "critical" and {"epsilon", "K", "mu"} <= set(reports):
        r1, r2 = scaling_relations_check({q: reports[q]["delta"] for q in ("epsilon", "K", "mu")})
        summary["autocorr"]["scaling_residuals"] = [r1, r2]
    writer.json("summary.json", summary)
    if result.failed:
        raise DivergenceError(f"{len(result.failed)} of {cfg.trajectories} trajectories diverged")
    return 0


def cmd_fit_noise(cfg, writer: RunWriter) -> int:
    import csv

    path = _opt(cfg, "noise", "data")
    if path is None:
        raise ConfigError("[noise] data = FILE (columns ideal, observed) is required")
    p = Path(path) if Path(path).is_absolute() else Path(cfg.base_dir) / path
    try:
        with open(p, newline="") as fh:
            rows = list(csv.DictReader(fh))
        ideal = np.array([float(r["ideal"]) for r in rows])
        observed = np.array([float(r["observed"]) for r in rows])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"[noise] data {p}: {exc}") from None
    try:
        O0 = float(cfg.O0)
    except ValueError:
        O0 = parse_target(cfg.O0, Experiment(cfg).observable)
    p_hat = estimate_p(ideal, observed, O0)
    writer.json("summary.json", {"status": "ok", "p": p_hat, "O0": O0, "n_points": int(ideal.size)})
    return 0


def cmd_compare(cfg, writer: RunWriter) -> int:
    pattern = _opt(cfg, "compare", "traj")
    theory_path = _opt(cfg, "compare", "theory")
    if pattern is None or theory_path is None:
        raise ConfigError("[compare] needs traj = GLOB and theory = FILE")
    base = Path(cfg.base_dir)
    pattern = pattern if Path(pattern).is_absolute() else str(base / pattern)
    files = sorted(glob.glob(pattern))
    if not files:
        raise ConfigError(f"[compare] traj = {pattern!r} matched no files")
    theory_file = Path(theory_path) if Path(theory_path).is_absolute() else base / theory_path
    tol = {k: _opt(cfg, "compare", k, v, float) for k, v in DEFAULT_TOLERANCES.items()}
    report = compare([read_trajectory(f) for f in files], read_json(theory_file), tol)
    report["files"] = [str(f) for f in files]
    writer.json("compare.json", report)
    writer.json("summary.json", {"status": "ok", "pass": report["pass"]})
    return 0


HANDLERS = {"train": cmd_train, "ensemble": cmd_ensemble, "theory": cmd_theory,
            "hessian-sweep": cmd_hessian_sweep, "framepot": cmd_framepot, "autocorr": cmd_autocorr,
            "fit-noise": cmd_fit_noise, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qnnlv", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"qnnlv {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", "-c", help="key = value config file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (section.key for non-run sections)")
    ap.add_argument("--jobs", "-j", type=int, help="parallel trajectory workers")
    ap.add_argument("--verbose", "-v", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if args.jobs is not None:
            overrides.append(f"jobs={args.jobs}")
        cfg = load_config(args.config, overrides, command=args.command)
        writer = RunWriter(cfg.out_dir)
        writer.text("config.resolved", cfg.to_text())
        return HANDLERS[cfg.command](cfg, writer)
    except QnnlvError as exc:
        print(f"qnnlv: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
