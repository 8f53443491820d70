import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_density, random_unitary
from freqbin.detection import MomentSet, NoiseModel, denoise_moments, moments_from_state, synthesize_raw_moments
from freqbin.errors import FreqbinWarning, NumericalError, UsageError
from freqbin.heralding import LossChannel, apply_loss
from freqbin.qlinalg import PAULI, DensityMatrix, state_fidelity, trace_distance
from freqbin.tomography import (
    CholeskyAnsatz,
    ProcessMatrix,
    _Quadratic,
    apply_chi,
    build_sensing_matrix,
    cardinal_inputs,
    chi_to_choi,
    choi_to_chi,
    gd_gradient,
    gd_loss,
    gd_qst,
    ls_qst,
    photonic_state,
    process_fidelity,
    project_logical,
    qpt,
)


def exact(rho):
    return moments_from_state(rho).with_stage("denoised")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_sensing_matrix_reproduces_moments(seed):
    rho = DensityMatrix((2, 2), random_density(4, seed=seed))
    sm = build_sensing_matrix()
    assert np.allclose(sm.apply(rho), sm.data_vector(moments_from_state(rho)), atol=1e-14)


def test_sensing_matrix_is_informationally_complete():
    sm = build_sensing_matrix()
    assert np.linalg.matrix_rank(sm.matrix) == 16


@pytest.mark.parametrize("seed", range(4))
def test_ls_recovers_exact_state(seed):
    rho = DensityMatrix((2, 2), random_density(4, rank=1 + seed % 4, seed=seed))
    est, info = ls_qst(exact(rho), return_info=True)
    assert info.converged
    assert trace_distance(rho, est) < 1e-5


def test_ls_projects_unphysical_data():
    m = exact(photonic_state(0.5))
    vals = dict(m.values)
    vals[(1, 1, 0, 0)] += 0.3  # population above one in total
    est = ls_qst(MomentSet(vals, "denoised"))
    assert np.linalg.eigvalsh(est.data)[0] > -1e-12
    assert np.trace(est.data).real == pytest.approx(1.0)


def test_raw_moments_rejected():
    raw, _ = synthesize_raw_moments(moments_from_state(photonic_state(0.1)), NoiseModel())
    with pytest.raises(UsageError, match="invalid-stage"):
        ls_qst(raw)
    with pytest.raises(UsageError, match="invalid-stage"):
        gd_qst(raw)


def test_gd_gradient_finite_difference():
    rng = np.random.default_rng(0)
    sm = build_sensing_matrix()
    rho = random_density(4, seed=1)
    B = sm.apply(rho) + 0.05 * (rng.normal(size=50) + 1j * rng.normal(size=50))
    q = _Quadratic(sm.matrix, B)
    T = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
    g = gd_gradient(T, q)
    h = 1e-6
    num = np.zeros_like(T)
    for idx in np.ndindex(T.shape):
        for unit, part in ((1.0, 1.0), (1j, 1j)):
            E = np.zeros_like(T)
            E[idx] = unit * h
            d = (gd_loss(T + E, q) - gd_loss(T - E, q)) / (2 * h)
            num[idx] += part * d
    assert np.linalg.norm(g - num) / np.linalg.norm(num) < 1e-5


@pytest.mark.parametrize("rank", [1, 4])
def test_gd_recovers_pure_state(rank):
    rho = photonic_state(1.2, 0.4)
    est = gd_qst(exact(rho), CholeskyAnsatz(rank=rank))
    assert state_fidelity(rho, est) > 0.9999


def test_gd_rank1_warns_on_mixed_state():
    rho = DensityMatrix((2, 2), np.eye(4) / 4)
    with pytest.warns(FreqbinWarning, match="rank-deficient"):
        gd_qst(exact(rho), CholeskyAnsatz(rank=1))


def test_invalid_rank():
    with pytest.raises(UsageError, match="invalid-rank"):
        CholeskyAnsatz(rank=5)


def test_ls_and_gd_agree_on_noisy_data():
    rng = np.random.default_rng(4)
    for seed in range(5):
        rho = DensityMatrix((2, 2), random_density(4, seed=100 + seed))
        raw, ref = synthesize_raw_moments(moments_from_state(rho), NoiseModel(shots=1_000_000), rng)
        d = denoise_moments(raw, ref)
        assert trace_distance(ls_qst(d), gd_qst(d)) < 0.02


def test_project_logical():
    rho = photonic_state(0.8, 0.3)
    st_, lost = project_logical(rho)
    assert lost == pytest.approx(0.0, abs=1e-15)
    lossy = apply_loss(rho, LossChannel.equal(0.25))
    blk, lost = project_logical(lossy, renormalize=False)
    assert lost == pytest.approx(0.25)
    assert np.trace(blk).real == pytest.approx(0.75)
    vac = DensityMatrix((2, 2), np.diag([1.0, 0, 0, 0]))
    with pytest.raises(NumericalError, match="empty-subspace"):
        project_logical(vac)


def test_choi_roundtrip_and_apply():
    U = random_unitary(2, seed=3)
    pm = ProcessMatrix.from_unitary(U)
    assert np.allclose(choi_to_chi(chi_to_choi(pm.chi)), pm.chi)
    rho = random_density(2, seed=8)
    assert np.allclose(apply_chi(pm.chi, rho), U @ rho @ U.conj().T)
    assert pm.tp_residual < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_qpt_random_unitary(seed):
    U = random_unitary(2, seed=seed)
    ins = [k for *_, k in cardinal_inputs()]
    outs = [U @ np.outer(k, k.conj()) @ U.conj().T for k in ins]
    pm = qpt(ins, outs)
    assert process_fidelity(pm, ProcessMatrix.from_unitary(U)) >= 0.9999


def test_qpt_identity_and_pauli():
    ins = [k for *_, k in cardinal_inputs()]
    pm = qpt(ins, [np.outer(k, k.conj()) for k in ins])
    assert pm.chi[0, 0].real == pytest.approx(1.0, abs=1e-6)
    X = PAULI["X"]
    pm = qpt(ins, [X @ np.outer(k, k.conj()) @ X for k in ins])
    assert process_fidelity(pm, ProcessMatrix.from_unitary(X)) == pytest.approx(1.0, abs=1e-6)


def test_qpt_trace_non_increasing():
    # erasure with probability p onto nothing: outputs scaled by (1 - p)
    p = 0.1
    ins = [k for *_, k in cardinal_inputs()]
    outs = [(1 - p) * np.outer(k, k.conj()) for k in ins]
    pm = qpt(ins, outs, trace_preserving=False)
    assert np.trace(pm.chi).real == pytest.approx(1 - p, abs=1e-6)
    assert process_fidelity(pm, ProcessMatrix.identity()) == pytest.approx(1 - p, abs=1e-6)


def test_qpt_needs_four_pairs():
    with pytest.raises(UsageError, match="invalid-process-data"):
        qpt([np.eye(2) / 2], [np.eye(2) / 2])


def test_cardinal_inputs():
    kets = [k for *_, k in cardinal_inputs()]
    assert len(kets) == 4
    assert abs(np.vdot(kets[1], kets[3])) == pytest.approx(math.sqrt(0.5))
    # |0_L> is the photon in mode A
    assert photonic_state(0.0).data[2, 2] == pytest.approx(1.0)
