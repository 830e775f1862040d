"""Turn a RunConfig into observables, circuits and trajectories."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from qnnlv.circuit import Circuit, build_hea, build_rpa
from qnnlv.config import RunConfig, parse_ansatz, parse_observable, parse_target
from qnnlv.errors import ConfigError, ResourceError
from qnnlv.pauli import DENSE_MAX_DIM, Observable
from qnnlv.training import DQNTK_MAX_L, LossSpec, Trajectory, train


def trajectory_seed(master_seed: int, index: int) -> int:
    return int(master_seed) ^ int(index)


@dataclass
class Experiment:
    """Resolved, validated pieces of a run shared by all of its trajectories."""

    cfg: RunConfig

    @cached_property
    def observable(self) -> Observable:
        return parse_observable(self.cfg.observable, self.cfg.n, self.cfg.base_dir, self.cfg.source)

    @property
    def n(self) -> int:
        n = self.observable.n
        if self.cfg.n is not None and self.cfg.n != n:
            raise ConfigError(f"n = {self.cfg.n} disagrees with observable on {n} qubits")
        return n

    @cached_property
    def ansatz(self) -> tuple[str, int]:
        return parse_ansatz(self.cfg.ansatz, self.cfg.source)

    @cached_property
    def n_params(self) -> int:
        kind, size = self.ansatz
        return size if kind == "rpa" else 2 * self.n * size

    @cached_property
    def O0(self) -> float:
        return parse_target(self.cfg.O0, self.observable)

    @cached_property
    def loss(self) -> LossSpec:
        return LossSpec(self.cfg.loss, self.O0)

    def check_resources(self) -> None:
        if (1 << self.n) > DENSE_MAX_DIM:
            raise ResourceError(f"d = {1 << self.n} exceeds dense cap {DENSE_MAX_DIM}")
        if self.n_params > DQNTK_MAX_L:
            raise ResourceError(f"L = {self.n_params} exceeds cap {DQNTK_MAX_L}")

    def circuit(self, rng: np.random.Generator) -> Circuit:
        kind, size = self.ansatz
        if kind == "rpa":
            return build_rpa(self.n, size, rng)
        return build_hea(self.n, size, rng)

    def meta(self, index: int, seed: int) -> dict:
        return {"index": index, "seed": seed, "master_seed": self.cfg.master_seed,
                "observable": self.observable.label, "ansatz": self.cfg.ansatz,
                "O_min": self.observable.o_min, "O_max": self.observable.o_max}

    def run_trajectory(self, index: int) -> Trajectory:
        """Fresh circuit and initial angles from seed = master_seed XOR index."""
        seed = trajectory_seed(self.cfg.master_seed, index)
        rng = np.random.default_rng(seed)
        circ = self.circuit(rng)
        return train(circ, self.observable, self.loss, eta=self.cfg.eta, T=self.cfg.steps,
                     record_stride=self.cfg.record_stride, mu_stride=self.cfg.mu_stride,
                     rng=rng, guard=self.guard, meta=self.meta(index, seed))

    @property
    def guard(self) -> float:
        raw = self.cfg.section("train").get("guard", "10")
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"[train] guard = {raw!r} is not a number") from None
        if value <= 1:
            raise ConfigError("[train] guard must exceed 1")
        return value
