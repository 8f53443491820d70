import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_density
from freqbin.errors import InvariantViolation, UsageError
from freqbin.qlinalg import (
    DensityMatrix,
    Operator,
    annihilation,
    embed,
    kron,
    partial_trace,
    project_simplex,
    psd_trace1_project,
    state_fidelity,
    trace_distance,
)


def test_density_matrix_validates():
    with pytest.raises(InvariantViolation, match="bad-trace"):
        DensityMatrix((2,), np.eye(2))
    with pytest.raises(InvariantViolation, match="not-positive"):
        DensityMatrix((2,), np.diag([1.5, -0.5]))
    with pytest.raises(InvariantViolation, match="invalid-dimension"):
        DensityMatrix((2, 2), np.eye(2) / 2)


def test_operator_dims_and_products():
    a = annihilation(3)
    assert np.allclose(a.data.conj().T @ a.data, np.diag([0, 1, 2]))
    op = kron(a, np.eye(2))
    assert op.dims == (3, 2)
    with pytest.raises(UsageError):
        op @ Operator((6,), np.eye(6))
    with pytest.raises(UsageError):
        annihilation(1)


def test_embed_matches_kron():
    a = annihilation(2).data
    e = embed(a, 1, (3, 2, 2)).data
    assert np.allclose(e, np.kron(np.kron(np.eye(3), a), np.eye(2)))


def test_partial_trace_product_state():
    ra = random_density(2, seed=1)
    rb = random_density(3, seed=2)
    rho = DensityMatrix((2, 3), np.kron(ra, rb))
    assert np.allclose(partial_trace(rho, [0]).data, ra)
    assert np.allclose(partial_trace(rho, [1]).data, rb)
    with pytest.raises(UsageError):
        partial_trace(rho, [2])


def test_fidelity_pure_states():
    psi = np.array([1, 1j]) / np.sqrt(2)
    phi = np.array([1, 0])
    a = DensityMatrix.from_ket((2,), psi)
    b = DensityMatrix.from_ket((2,), phi)
    assert state_fidelity(a, b) == pytest.approx(0.5)
    assert state_fidelity(a, a) == pytest.approx(1.0)
    assert trace_distance(a, b) == pytest.approx(np.sqrt(0.5))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_fidelity_symmetric_and_bounded(s1, s2):
    a = random_density(4, seed=s1)
    b = random_density(4, seed=s2)
    f_ab = state_fidelity(a, b)
    assert 0.0 <= f_ab <= 1.0
    assert f_ab == pytest.approx(state_fidelity(b, a), abs=1e-7)
    # Fuchs-van de Graaf
    t = trace_distance(a, b)
    assert 1 - np.sqrt(f_ab) <= t + 1e-9 <= np.sqrt(1 - f_ab) + 2e-9


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(0.1, 3.0))
def test_simplex_projection(v, total):
    p = project_simplex(np.array(v), total)
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(total, rel=1e-9, abs=1e-9)
    # optimality: no feasible simplex vertex is closer
    for k in range(len(v)):
        e = np.zeros(len(v))
        e[k] = total
        assert np.linalg.norm(p - v) <= np.linalg.norm(e - v) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_psd_projection_idempotent(seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    h = h + h.conj().T
    p = psd_trace1_project(h, (2, 2))
    q = psd_trace1_project(p)
    assert np.allclose(p.data, q.data, atol=1e-10)
    assert np.linalg.eigvalsh(p.data)[0] > -1e-12
