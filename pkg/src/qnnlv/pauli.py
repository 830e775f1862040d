"""Pauli strings, observables and their trace identities.

Qubit ``q`` of an ``n``-qubit register lives on bit ``n - 1 - q`` of the
basis index, so the label ``"ZI"`` acts with Z on the most significant bit
and dense matrices follow the usual ``kron(word[0], word[1], ...)`` order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from qnnlv.errors import (
    HermiticityError,
    IntegrityError,
    InvalidSizeError,
    NormalizationError,
    ResourceError,
)

DENSE_MAX_DIM = 4096

_LETTERS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_I_POW = np.array([1, 1j, -1, -1j])


def popcount(x: int) -> int:
    return bin(x).count("1")


def parity_array(values: np.ndarray) -> np.ndarray:
    """Bit parity of every entry of a non-negative integer array."""
    return (np.bitwise_count(values) & 1).astype(np.int8)


def word_product_phase(xa: int, za: int, xb: int, zb: int) -> int:
    """Power of i in ``P_a P_b = i^k P_c`` for Hermitian Pauli words."""
    x3, z3 = xa ^ xb, za ^ zb
    k = popcount(xa & za) + popcount(xb & zb) + 2 * popcount(za & xb) - popcount(x3 & z3)
    return k % 4


@dataclass(frozen=True)
class PauliString:
    """``coeff * i**phase * P`` with ``P`` the Hermitian word given by the masks."""

    n: int
    x_mask: int
    z_mask: int
    coeff: float = 1.0
    phase: int = 0

    def __post_init__(self):
        limit = 1 << self.n
        if self.n < 1 or not (0 <= self.x_mask < limit and 0 <= self.z_mask < limit):
            raise InvalidSizeError(f"masks do not fit in {self.n} qubits")
        object.__setattr__(self, "phase", self.phase % 4)

    @classmethod
    def from_label(cls, label: str, coeff: float = 1.0) -> "PauliString":
        label = label.strip().upper()
        n = len(label)
        x = z = 0
        for q, ch in enumerate(label):
            if ch not in _LETTERS:
                raise ValueError(f"bad Pauli letter {ch!r} in {label!r}")
            bx, bz = _LETTERS[ch]
            bit = n - 1 - q
            x |= bx << bit
            z |= bz << bit
        return cls(n, x, z, float(coeff))

    @classmethod
    def single(cls, n: int, qubit: int, letter: str, coeff: float = 1.0) -> "PauliString":
        bx, bz = _LETTERS[letter]
        bit = n - 1 - qubit
        return cls(n, bx << bit, bz << bit, float(coeff))

    @property
    def label(self) -> str:
        out = []
        for q in range(self.n):
            bit = self.n - 1 - q
            pair = ((self.x_mask >> bit) & 1, (self.z_mask >> bit) & 1)
            out.append({v: k for k, v in _LETTERS.items()}[pair])
        return "".join(out)

    @property
    def weight(self) -> int:
        return popcount(self.x_mask | self.z_mask)

    @property
    def scalar(self) -> complex:
        return self.coeff * _I_POW[self.phase]

    def is_identity(self) -> bool:
        return self.x_mask == 0 and self.z_mask == 0

    def __mul__(self, other: "PauliString") -> "PauliString":
        if not isinstance(other, PauliString):
            return NotImplemented
        if other.n != self.n:
            raise InvalidSizeError("qubit counts differ")
        k = word_product_phase(self.x_mask, self.z_mask, other.x_mask, other.z_mask)
        return PauliString(
            self.n,
            self.x_mask ^ other.x_mask,
            self.z_mask ^ other.z_mask,
            self.coeff * other.coeff,
            self.phase + other.phase + k,
        )

    def commutes_with(self, other: "PauliString") -> bool:
        s = popcount(self.x_mask & other.z_mask) + popcount(self.z_mask & other.x_mask)
        return s % 2 == 0

    def action(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(perm, factor)`` with ``(P psi)[k] = factor[k] * psi[perm[k]]``."""
        k = np.arange(1 << self.n, dtype=np.int64)
        perm = k ^ self.x_mask
        sign = 1 - 2 * parity_array(perm & self.z_mask)
        factor = self.scalar * _I_POW[popcount(self.x_mask & self.z_mask) % 4] * sign
        return perm, factor.astype(complex)

    def apply(self, psi: np.ndarray) -> np.ndarray:
        perm, factor = self.action()
        if psi.ndim == 1:
            return factor * psi[perm]
        return factor[:, None] * psi[perm]

    def to_dense(self) -> np.ndarray:
        d = 1 << self.n
        perm, factor = self.action()
        mat = np.zeros((d, d), dtype=complex)
        mat[np.arange(d), perm] = factor
        return mat


def pauli_sum_product(a: dict, b: dict) -> dict:
    """Multiply two Pauli sums stored as ``{(x, z): complex coeff}``."""
    out: dict = {}
    for (xa, za), ca in a.items():
        for (xb, zb), cb in b.items():
            key = (xa ^ xb, za ^ zb)
            val = ca * cb * _I_POW[word_product_phase(xa, za, xb, zb)]
            out[key] = out.get(key, 0.0) + val
    return out


@dataclass(frozen=True, eq=False)
class Observable:
    """Hermitian observable: a real-weighted Pauli sum or a rank-one projector."""

    kind: str
    n: int
    terms: tuple = ()
    target: np.ndarray | None = field(default=None, repr=False)
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("pauli_sum", "projector"):
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if self.kind == "pauli_sum":
            for t in self.terms:
                if t.n != self.n:
                    raise InvalidSizeError("term size mismatch")
                if t.phase % 2:
                    raise HermiticityError(f"term {t.label} has imaginary weight")

    @property
    def dim(self) -> int:
        return 1 << self.n

    @cached_property
    def coefficients(self) -> dict:
        """Merged Hermitian-basis coefficients ``{(x, z): real}``."""
        out: dict = {}
        for t in self.terms:
            key = (t.x_mask, t.z_mask)
            out[key] = out.get(key, 0.0) + t.scalar.real
        return out

    @cached_property
    def _groups(self) -> list[tuple[np.ndarray, np.ndarray]]:
        # terms sharing an X mask share one permutation
        by_x: dict = {}
        k = np.arange(self.dim, dtype=np.int64)
        for (x, z), c in self.coefficients.items():
            perm = k ^ x
            sign = 1 - 2 * parity_array(perm & z)
            diag = c * _I_POW[popcount(x & z) % 4] * sign
            by_x[x] = by_x.get(x, 0) + diag
        return [(k ^ x, np.asarray(diag, dtype=complex)) for x, diag in sorted(by_x.items())]

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """Return ``O psi`` for a vector or a ``(d, m)`` stack of columns."""
        if self.kind == "projector":
            phi = self.target
            if psi.ndim == 1:
                return phi * np.vdot(phi, psi)
            return np.outer(phi, phi.conj() @ psi)
        out = np.zeros_like(psi, dtype=complex)
        for perm, diag in self._groups:
            if psi.ndim == 1:
                out += diag * psi[perm]
            else:
                out += diag[:, None] * psi[perm]
        return out

    def expectation(self, psi: np.ndarray) -> float:
        val = np.vdot(psi, self.apply(psi))
        if abs(val.imag) > 1e-6:
            raise HermiticityError(f"imaginary expectation residue {val.imag:.3e}")
        return float(val.real)

    @cached_property
    def dense(self) -> np.ndarray:
        if self.dim > DENSE_MAX_DIM:
            raise ResourceError(f"dense realization of d={self.dim} exceeds cap {DENSE_MAX_DIM}")
        if self.kind == "projector":
            return np.outer(self.target, self.target.conj())
        return self.apply(np.eye(self.dim, dtype=complex))

    @cached_property
    def trace_powers(self) -> np.ndarray:
        """``tr(O^k)`` for k = 1..4, by Pauli-sum algebra (no dense matrices)."""
        if self.kind == "projector":
            return np.ones(4)
        d = self.dim
        o1 = self.coefficients
        o2 = pauli_sum_product(o1, o1)
        t1 = d * o1.get((0, 0), 0.0)
        t2 = d * o2.get((0, 0), 0.0).real
        t3 = d * sum((c * o1.get(key, 0.0)).real for key, c in o2.items())
        t4 = d * sum((c * c).real for c in o2.values())
        return np.array([t1, t2, t3, t4], dtype=float)

    @cached_property
    def spectrum(self) -> tuple[float, float]:
        """``(O_min, O_max)`` from a full Hermitian eigensolve."""
        if self.kind == "projector":
            return (0.0, 1.0)
        mat = self.dense
        asym = np.max(np.abs(mat - mat.conj().T))
        if asym > 1e-12:
            raise IntegrityError(f"dense observable not Hermitian (max asym {asym:.3e})")
        w = scipy.linalg.eigh(mat, eigvals_only=True)
        return (float(w[0]), float(w[-1]))

    @property
    def o_min(self) -> float:
        return self.spectrum[0]

    @property
    def o_max(self) -> float:
        return self.spectrum[1]

    def ground_state(self) -> np.ndarray:
        if self.kind == "projector":
            return self.target.copy()
        _, vecs = scipy.linalg.eigh(self.dense)
        return vecs[:, 0]


def pauli_sum(n: int, terms: Iterable[PauliString], label: str = "") -> Observable:
    return Observable("pauli_sum", n, tuple(terms), label=label)


def build_xxz(n: int, J: float) -> Observable:
    """Open-boundary XXZ chain with a longitudinal field of the same strength J."""
    if n < 2:
        raise InvalidSizeError("XXZ needs n >= 2")
    terms = []
    for i in range(n - 1):
        for letter, c in (("X", -1.0), ("Y", -1.0), ("Z", -float(J))):
            a = PauliString.single(n, i, letter)
            b = PauliString.single(n, i + 1, letter)
            terms.append(PauliString(n, a.x_mask | b.x_mask, a.z_mask | b.z_mask, c))
    for i in range(n):
        terms.append(PauliString.single(n, i, "Z", -float(J)))
    return pauli_sum(n, terms, label=f"xxz({n},{J:g})")


def build_tfim(n: int, h: float) -> Observable:
    if n < 2:
        raise InvalidSizeError("TFIM needs n >= 2")
    terms = []
    for i in range(n - 1):
        a = PauliString.single(n, i, "Z")
        b = PauliString.single(n, i + 1, "Z")
        terms.append(PauliString(n, 0, a.z_mask | b.z_mask, -1.0))
    for i in range(n):
        terms.append(PauliString.single(n, i, "X", -float(h)))
    return pauli_sum(n, terms, label=f"tfim({n},{h:g})")


def build_projector(target: Sequence[complex], label: str = "") -> Observable:
    phi = np.asarray(target, dtype=complex).ravel()
    d = phi.size
    n = d.bit_length() - 1
    if d < 2 or (1 << n) != d:
        raise InvalidSizeError(f"target length {d} is not a power of two")
    norm = np.linalg.norm(phi)
    if abs(norm - 1.0) > 1e-12:
        raise NormalizationError(f"target norm {norm!r} differs from 1")
    phi.setflags(write=False)
    return Observable("projector", n, (), target=phi, label=label or "projector")


def random_state(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def read_pauli_file(path, n: int | None = None) -> Observable:
    """Parse ``coeff pauli_word`` lines; blank lines and ``#`` comments skipped."""
    terms = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'coeff pauli_word'")
            terms.append(PauliString.from_label(parts[1], float(parts[0])))
    if not terms:
        raise ValueError(f"{path}: no terms")
    sizes = {t.n for t in terms}
    if len(sizes) != 1 or (n is not None and sizes != {n}):
        raise InvalidSizeError(f"{path}: inconsistent word lengths {sorted(sizes)}")
    return pauli_sum(sizes.pop(), terms, label=f"pauli_sum({path})")


def xxz_trace_powers(n: int, J: float) -> np.ndarray:
    """Closed-form ``(tr O^2, tr O^3, tr O^4)`` of the XXZ observable."""
    if n < 2:
        raise InvalidSizeError("XXZ needs n >= 2")
    d = float(1 << n)
    J2 = J * J
    t2 = ((J2 + 2) * (n - 1) + J2 * n) * d
    t3 = 6 * J * (1 - J2) * (n - 1) * d
    t4 = (12 * (J2 + 1) ** 2 * n * n + 4 * (2 * J2 * J2 - 19 * J2 - 9) * n
          - 43 * J2 * J2 + 68 * J2 + 32) * d
    return np.array([t2, t3, t4])


def trace_powers_dense(obs: Observable) -> np.ndarray:
    """``tr(O^k)`` for k = 1..4 via dense matrix products."""
    m = obs.dense
    m2 = m @ m
    t1 = np.trace(m)
    t2 = np.trace(m2)
    t3 = np.sum(m2 * m.T)
    t4 = np.sum(m2 * m2.T)
    return np.real(np.array([t1, t2, t3, t4]))


def extremal_eigenvalues(obs: Observable) -> tuple[float, float]:
    return obs.spectrum
