import numpy as np
import pytest

from qnnlv.circuit import (apply, build_hea, build_rpa, haar_matrix, random_theta, sample_haar_unitary,
                           sample_restricted_haar)
from qnnlv.errors import InvalidSizeError, NormalizationError, ShapeError
from qnnlv.pauli import PauliString, random_state


def rotation(p, angle):
    return np.cos(angle / 2) * np.eye(p.shape[0]) - 1j * np.sin(angle / 2) * p


def test_haar_unitarity_and_first_moment():
    rng = np.random.default_rng(0)
    d, N = 4, 10_000
    vals = np.empty(N)
    for i in range(N):
        u = haar_matrix(d, rng)
        vals[i] = abs(u[0, 0]) ** 2
    u = sample_haar_unitary(d, rng).matrix
    assert np.max(np.abs(u.conj().T @ u - np.eye(d))) < 1e-10
    assert abs(vals.mean() - 1 / d) < 3 * vals.std() / np.sqrt(N)


def test_haar_needs_two_dims():
    with pytest.raises(InvalidSizeError):
        sample_haar_unitary(1, 0)


def test_restricted_haar_maps_basis_exactly(rng):
    d = 8
    vin, vout = random_state(d, rng), random_state(d, rng)
    u = sample_restricted_haar(d, vin, vout, rng).matrix
    assert np.max(np.abs(u.conj().T @ u - np.eye(d))) < 1e-10
    assert np.max(np.abs(u @ vin - vout)) < 1e-12


def test_restricted_haar_complement_moment():
    rng = np.random.default_rng(3)
    d, N = 4, 4000
    e = np.eye(d, dtype=complex)
    vals = np.empty(N)
    for i in range(N):
        u = sample_restricted_haar(d, e[0], e[0], rng).matrix
        vals[i] = abs(u[1, 1]) ** 2
    assert np.isclose(abs(u[0, 0]), 1.0) and np.allclose(u[0, 1:], 0, atol=1e-12)
    assert abs(vals.mean() - 1 / (d - 1)) < 3 * vals.std() / np.sqrt(N)


def test_restricted_haar_input_checks(rng):
    with pytest.raises(NormalizationError):
        sample_restricted_haar(2, [1, 1], [1, 0], rng)
    with pytest.raises(ShapeError):
        sample_restricted_haar(4, [1, 0], [1, 0], rng)


def test_rpa_matches_dense_product():
    c = build_rpa(3, 5, np.random.default_rng(2))
    theta = random_theta(c.L, 7)
    u = np.eye(8, dtype=complex)
    for l in range(c.L):
        u = c.haar_gate(l) @ rotation(c.generators[l].to_dense(), theta[l]) @ u
    assert np.allclose(c.unitary(theta), u)
    assert all(g.weight == 3 for g in c.generators)
    assert np.isclose(np.linalg.norm(apply(c, theta)), 1.0)


def test_rpa_uncached_gates_regenerate_identically():
    c = build_rpa(7, 2, 5)
    assert c.dim > 64 and not c._haar_cache
    assert np.array_equal(c.haar_gate(1), c.haar_gate(1))


def test_rpa_is_seed_deterministic():
    a, b = build_rpa(3, 4, 11), build_rpa(3, 4, 11)
    th = random_theta(4, 1)
    assert np.array_equal(apply(a, th), apply(b, th))


def cnot(n, control, target):
    d = 1 << n
    m = np.zeros((d, d))
    for k in range(d):
        bits = [(k >> (n - 1 - q)) & 1 for q in range(n)]
        if bits[control]:
            bits[target] ^= 1
        j = sum(b << (n - 1 - q) for q, b in enumerate(bits))
        m[j, k] = 1
    return m


def test_hea_matches_dense_layers():
    n, D = 3, 2
    c = build_hea(n, D)
    assert c.L == 2 * n * D
    theta = random_theta(c.L, 4)
    u = np.eye(8, dtype=complex)
    l = 0
    for layer in range(D):
        for letter in "YZ":
            for q in range(n):
                word = "".join(letter if i == q else "I" for i in range(n))
                u = rotation(PauliString.from_label(word).to_dense(), theta[l]) @ u
                l += 1
        bonds = [(0, 1)] if layer % 2 == 0 else [(1, 2)]
        for a, b in bonds:
            u = cnot(n, a, b) @ u
    assert np.allclose(c.unitary(theta), u)


def test_hea_two_qubits_keeps_entangling_every_layer():
    c = build_hea(2, 2)
    perms = [f for f in c.fixed if f is not None]
    assert len(perms) == 2 and all(f[0] == "perm" for f in perms)


def test_theta_shape_checked():
    c = build_rpa(2, 3, 0)
    with pytest.raises(ShapeError):
        apply(c, np.zeros(4))
