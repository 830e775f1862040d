"""Dense statevector circuits: random Pauli ansatz, hardware-efficient ansatz,
Haar and restricted-Haar unitary sampling.

A circuit is a list of slots. Slot ``l`` applies the Pauli rotation
``exp(-i theta_l P_l / 2) = cos(theta_l/2) I - i sin(theta_l/2) P_l`` and then
an optional fixed gate (a Haar unitary for RPA, a CNOT layer for HEA).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from qnnlv.errors import InvalidSizeError, NormalizationError, ShapeError
from qnnlv.pauli import PauliString

HAAR_CACHE_MAX_DIM = 64


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def haar_matrix(d: int, rng: np.random.Generator) -> np.ndarray:
    """Ginibre QR with the diagonal of R normalised to unit phases."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    return q * (diag / np.abs(diag))


@dataclass(frozen=True, eq=False)
class UnitarySample:
    matrix: np.ndarray
    ensemble: str

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def sample_haar_unitary(d: int, rng) -> UnitarySample:
    if d < 2:
        raise InvalidSizeError("Haar sampling needs d >= 2")
    return UnitarySample(haar_matrix(d, as_generator(rng)), "haar")


def _frame_with_first(v: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unitary whose first column is exactly ``v``."""
    d = v.size
    a = np.empty((d, d), dtype=complex)
    a[:, 0] = v
    a[:, 1:] = rng.standard_normal((d, d - 1)) + 1j * rng.standard_normal((d, d - 1))
    q, r = np.linalg.qr(a)
    q[:, 0] = v
    # re-orthogonalise the complement against the exact first column
    rest = q[:, 1:] - np.outer(v, v.conj() @ q[:, 1:])
    rest, _ = np.linalg.qr(rest)
    q[:, 1:] = rest
    return q


def sample_restricted_haar(d: int, basis_in, basis_out, rng) -> UnitarySample:
    """Unitary sending ``basis_in`` to ``basis_out`` and Haar on the complement."""
    rng = as_generator(rng)
    vin = np.asarray(basis_in, dtype=complex).ravel()
    vout = np.asarray(basis_out, dtype=complex).ravel()
    if vin.size != d or vout.size != d:
        raise ShapeError("basis vectors must have length d")
    for v in (vin, vout):
        if abs(np.linalg.norm(v) - 1.0) > 1e-10:
            raise NormalizationError("basis vectors must be normalised")
    q_in = _frame_with_first(vin, rng)
    q_out = _frame_with_first(vout, rng)
    block = np.zeros((d, d), dtype=complex)
    block[0, 0] = 1.0
    block[1:, 1:] = haar_matrix(d - 1, rng)
    return UnitarySample(q_out @ block @ q_in.conj().T, "restricted_haar")


def _cnot_layer_source(n: int, bonds) -> np.ndarray:
    # CNOT layers are involutions, so source index == image index
    k = np.arange(1 << n, dtype=np.int64)
    out = k.copy()
    for c, t in bonds:
        cbit, tbit = n - 1 - c, n - 1 - t
        out ^= ((out >> cbit) & 1) << tbit
    return out


@dataclass(frozen=True, eq=False)
class Circuit:
    """Immutable parameterised circuit.

    ``fixed[l]`` is ``None``, ``("perm", src)`` with ``(F psi)[k] = psi[src[k]]``,
    or ``("haar", slot_seed)`` for a Haar unitary that is cached when
    ``d <= HAAR_CACHE_MAX_DIM`` and regenerated from its seed otherwise.
    """

    ansatz: str
    n: int
    generators: tuple
    fixed: tuple
    seed: int

    @property
    def L(self) -> int:
        return len(self.generators)

    @property
    def dim(self) -> int:
        return 1 << self.n

    @cached_property
    def _actions(self) -> tuple[np.ndarray, np.ndarray]:
        perms, factors = zip(*(g.action() for g in self.generators))
        return np.stack(perms), np.stack(factors)

    @cached_property
    def _haar_cache(self) -> dict:
        if self.dim > HAAR_CACHE_MAX_DIM:
            return {}
        return {l: haar_matrix(self.dim, np.random.default_rng(spec[1]))
                for l, spec in enumerate(self.fixed) if spec is not None and spec[0] == "haar"}

    @cached_property
    def _inverse_perms(self) -> dict:
        return {l: np.argsort(spec[1]) for l, spec in enumerate(self.fixed)
                if spec is not None and spec[0] == "perm"}

    def haar_gate(self, l: int) -> np.ndarray:
        cached = self._haar_cache.get(l)
        if cached is not None:
            return cached
        return haar_matrix(self.dim, np.random.default_rng(self.fixed[l][1]))

    def pauli(self, l: int, psi: np.ndarray) -> np.ndarray:
        perm, factor = self._actions[0][l], self._actions[1][l]
        if psi.ndim == 1:
            return factor * psi[perm]
        return factor[:, None] * psi[perm]

    def rotate(self, l: int, angle: float, psi: np.ndarray, adjoint: bool = False) -> np.ndarray:
        c, s = np.cos(angle / 2), np.sin(angle / 2)
        if adjoint:
            s = -s
        return c * psi - 1j * s * self.pauli(l, psi)

    def fixed_gate(self, l: int, psi: np.ndarray, adjoint: bool = False) -> np.ndarray:
        spec = self.fixed[l]
        if spec is None:
            return psi
        if spec[0] == "perm":
            src = self._inverse_perms[l] if adjoint else spec[1]
            return psi[src]
        w = self.haar_gate(l)
        return (w.conj().T if adjoint else w) @ psi

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.L,):
            raise ShapeError(f"expected {self.L} angles, got shape {theta.shape}")
        return theta

    def initial_state(self) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[0] = 1.0
        return psi

    def unitary(self, theta) -> np.ndarray:
        """Dense circuit unitary, for oracles on small registers."""
        return apply(self, theta, np.eye(self.dim, dtype=complex))


def apply(circuit: Circuit, theta, psi_in: np.ndarray | None = None) -> np.ndarray:
    """Run the circuit on ``psi_in`` (default ``|0...0>``); accepts column stacks."""
    theta = circuit.check_theta(theta)
    psi = circuit.initial_state() if psi_in is None else np.array(psi_in, dtype=complex)
    if psi.shape[0] != circuit.dim:
        raise ShapeError("state dimension mismatch")
    for l in range(circuit.L):
        psi = circuit.rotate(l, theta[l], psi)
        psi = circuit.fixed_gate(l, psi)
    return psi


def expectation(obs, state: np.ndarray) -> float:
    return obs.expectation(state)


def random_full_support_pauli(n: int, rng: np.random.Generator) -> PauliString:
    letters = rng.choice(np.array(list("XYZ")), size=n)
    return PauliString.from_label("".join(letters))


def build_rpa(n: int, L: int, rng) -> Circuit:
    """Random Pauli ansatz: rotations about full-support Pauli words, each followed
    by a fixed Haar unitary."""
    if L < 1:
        raise InvalidSizeError("RPA needs L >= 1")
    if n < 1:
        raise InvalidSizeError("RPA needs n >= 1")
    seed = int(as_generator(rng).integers(2**63)) if isinstance(rng, np.random.Generator) else int(rng)
    gen_rng = np.random.default_rng([seed, 0])
    gens = tuple(random_full_support_pauli(n, gen_rng) for _ in range(L))
    fixed = tuple(("haar", [seed, 1, l]) for l in range(L))
    return Circuit("rpa", n, gens, fixed, seed)


def build_hea(n: int, D: int, rng=0) -> Circuit:
    """Hardware-efficient ansatz: per layer RY then RZ on every qubit, then a CNOT
    brickwall on even bonds (even layers) or odd bonds (odd layers)."""
    if D < 1:
        raise InvalidSizeError("HEA needs D >= 1")
    if n < 2:
        raise InvalidSizeError("HEA needs n >= 2")
    seed = int(as_generator(rng).integers(2**63)) if isinstance(rng, np.random.Generator) else int(rng)
    gens, fixed = [], []
    for layer in range(D):
        for letter in ("Y", "Z"):
            for q in range(n):
                gens.append(PauliString.single(n, q, letter))
                fixed.append(None)
        start = layer % 2
        bonds = [(q, q + 1) for q in range(start, n - 1, 2)]
        if not bonds:
            bonds = [(q, q + 1) for q in range(0, n - 1, 2)]
        fixed[-1] = ("perm", _cnot_layer_source(n, bonds))
    return Circuit("hea", n, tuple(gens), tuple(fixed), seed)


def random_theta(L: int, rng) -> np.ndarray:
    """Initial angles, uniform on [0, 2 pi)."""
    return as_generator(rng).uniform(0.0, 2 * np.pi, size=L)
