"""Atomic output files: trajectory CSVs with JSON sidecars, JSON reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from qnnlv.errors import ConfigError, IntegrityError
from qnnlv.training import COLUMNS, Trajectory, derived_diagnostics

INT_COLUMNS = ("t", "mu_fresh")


def _plain(obj):
    """JSON-safe copy: numpy scalars and arrays unwrapped, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if hasattr(obj, "numerator") and hasattr(obj, "denominator") and not isinstance(obj, (int, bool)):
        return float(obj)
    return obj


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class RunWriter:
    """Single writer for one run directory; every file lands via temp file + rename."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create out_dir {out_dir}: {exc}") from None
        if not os.access(self.root, os.W_OK):
            raise ConfigError(f"out_dir {out_dir} is not writable")
        self.written: list[str] = []

    def text(self, name: str, content: str) -> Path:
        path = self.root / name
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(content)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(name)
        return path

    def json(self, name: str, obj) -> Path:
        return self.text(name, json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        return self.text(name, buf.getvalue())

    def series(self, name: str, columns: dict) -> Path:
        """Columns of equal length as one CSV (plot-ready overlay data)."""
        keys = list(columns)
        arrays = [np.asarray(columns[k]) for k in keys]
        return self.csv(name, keys, zip(*arrays))

    def trajectory(self, index: int, traj: Trajectory) -> Path:
        rows = zip(*(traj[k] for k in COLUMNS))
        path = self.csv(f"traj_{index}.csv", COLUMNS, rows)
        self.json(f"traj_{index}.json", traj.meta)
        return path


def read_trajectory(path) -> Trajectory:
    """Load ``traj_<i>.csv`` and its JSON sidecar (if present)."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"t", "epsilon", "K", "mu"} - set(reader.fieldnames or ())
            if missing:
                raise IntegrityError(f"{path}: missing columns {sorted(missing)}")
            rows = list(reader)
    except OSError as exc:
        raise ConfigError(f"cannot read trajectory {path}: {exc}") from None
    data = {}
    for key in COLUMNS:
        if rows and key in rows[0]:
            kind = int if key in INT_COLUMNS else float
            try:
                data[key] = np.array([kind(r[key]) for r in rows])
            except (TypeError, ValueError) as exc:
                raise IntegrityError(f"{path}: column {key}: {exc}") from None
    if "lambda" not in data:
        data["lambda"], data["zeta"], data["C"] = derived_diagnostics(data["epsilon"], data["K"], data["mu"])
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return Trajectory(data, np.array([]), meta)


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
