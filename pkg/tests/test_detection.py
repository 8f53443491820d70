import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_density
from freqbin.detection import (
    MomentSet,
    NoiseModel,
    apply_scales,
    conj_index,
    denoise_moments,
    moment_indices,
    moment_matrix,
    moments_from_state,
    normalization_scales,
    synthesize_raw_moments,
    target_occupation,
    temporal_filter,
)
from freqbin.dynamics import Envelope
from freqbin.errors import InvariantViolation, NumericalError, UsageError
from freqbin.qlinalg import DensityMatrix
from freqbin.tomography import photonic_state


def test_index_grid():
    ix = moment_indices()
    assert len(ix) == 50
    assert (0, 0, 0, 0) in ix and (2, 2, 0, 0) in ix and (1, 1, 1, 1) in ix
    assert (2, 2, 1, 0) not in ix
    assert conj_index((2, 1, 0, 1)) == (1, 2, 1, 0)


def test_encoded_state_moments():
    theta = 1.1
    m = moments_from_state(photonic_state(theta))
    assert m[(1, 1, 0, 0)].real == pytest.approx(math.cos(theta / 2) ** 2)
    assert m[(0, 0, 1, 1)].real == pytest.approx(math.sin(theta / 2) ** 2)
    assert abs(m[(1, 0, 0, 1)]) == pytest.approx(math.sin(theta) / 2)
    assert abs(m[(0, 1, 0, 1)]) < 1e-15
    assert abs(m[(2, 2, 0, 0)]) < 1e-15
    m.check()


def test_thermal_noise_moments():
    nm = NoiseModel(n_added=2.1)
    assert nm.noise_moment(1, 1) == pytest.approx(3.1)
    assert nm.noise_moment(2, 2) == pytest.approx(2 * 3.1**2)
    assert nm.noise_moment(2, 1) == 0.0
    assert nm.quantum_efficiency == pytest.approx(0.5 / 2.6)
    with pytest.raises(InvariantViolation):
        NoiseModel(n_added=2.1, quantum_efficiency=0.9)
    with pytest.raises(UsageError):
        NoiseModel(n_added=-1)


def test_raw_power_includes_noise():
    ideal = moments_from_state(photonic_state(0.0))
    raw, ref = synthesize_raw_moments(ideal, NoiseModel(n_added=2.1))
    assert raw[(1, 1, 0, 0)].real == pytest.approx(1.0 + 3.1)
    assert ref[(1, 1, 0, 0)].real == pytest.approx(3.1)
    assert ref[(0, 0, 2, 2)].real == pytest.approx(2 * 3.1**2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 5.0))
def test_denoise_inverts_synthesis(seed, n_added):
    rho = DensityMatrix((2, 2), random_density(4, seed=seed))
    ideal = moments_from_state(rho)
    raw, ref = synthesize_raw_moments(ideal, NoiseModel(n_added=n_added))
    den = denoise_moments(raw, ref)
    err = max(abs(den[ix] - ideal[ix]) for ix in ideal.indices())
    assert err < 1e-10


def test_finite_shots_are_conjugate_symmetric_and_seeded():
    ideal = moments_from_state(photonic_state(0.7))
    nm = NoiseModel(shots=10_000, seed=3)
    raw1, ref1 = synthesize_raw_moments(ideal, nm)
    raw2, _ = synthesize_raw_moments(ideal, nm)
    assert raw1.values == raw2.values
    assert raw1.symmetry_residual() < 1e-15
    assert ref1[(0, 0, 0, 0)] == 1.0
    assert raw1.sigma[(1, 1, 0, 0)] > 0


def test_shot_noise_standard_error():
    ideal = moments_from_state(photonic_state(0.7))
    nm = NoiseModel(shots=100_000)
    rng = np.random.default_rng(11)
    errs = []
    for _ in range(400):
        raw, ref = synthesize_raw_moments(ideal, nm, rng)
        errs.append(denoise_moments(raw, ref)[(1, 0, 0, 1)] - ideal[(1, 0, 0, 1)])
    rms = np.sqrt(np.mean(np.abs(errs) ** 2))
    # raw and reference errors add in quadrature through the subtracted noise cross term
    ix = (1, 0, 0, 1)
    assert rms == pytest.approx(math.hypot(raw.sigma[ix], ref.sigma[ix]), rel=0.1)


def test_wrong_stage_and_bad_reference():
    ideal = moments_from_state(photonic_state(0.3))
    raw, ref = synthesize_raw_moments(ideal, NoiseModel())
    with pytest.raises(UsageError, match="invalid-stage"):
        synthesize_raw_moments(raw, NoiseModel())
    bad = dict(ref.values)
    bad[(1, 1, 0, 0)] = 0.5
    with pytest.raises(NumericalError, match="bad-reference"):
        denoise_moments(raw, MomentSet(bad, "reference"))
    with pytest.raises(UsageError, match="incomplete-moments"):
        synthesize_raw_moments(MomentSet({(2, 2, 0, 0): 0.0}, "ideal"), NoiseModel())


def test_csv_roundtrip_bit_exact(tmp_path):
    rho = DensityMatrix((2, 2), random_density(4, seed=5))
    raw, _ = synthesize_raw_moments(moments_from_state(rho), NoiseModel(shots=1000, seed=2))
    path = tmp_path / "m.csv"
    raw.to_csv(path)
    text = path.read_text().splitlines()
    assert text[0].startswith("# freqbin-lab v") and text[0].endswith("schema=1")
    assert text[2] == "mA,nA,mS,nS,re,im,stage"
    back = MomentSet.from_csv(path)
    assert back.values == raw.values
    assert back.stage == "raw" and back.shots == 1000


def test_bad_csv(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("mA,nA,mS,nS,re,im,stage\n1,x,0,0,1,0,raw\n")
    with pytest.raises(UsageError, match="invalid-moment-file"):
        MomentSet.from_csv(path)


def test_moment_matrix_psd():
    rho = DensityMatrix((2, 2), random_density(4, seed=9))
    g = moment_matrix(moments_from_state(rho))
    assert np.allclose(g, g.conj().T)
    assert np.linalg.eigvalsh(g)[0] > -1e-12


def test_temporal_filter():
    t = np.linspace(0, 1, 1001)
    f = np.exp(-t).astype(complex)
    f /= np.sqrt(np.sum(np.abs(f) ** 2) * (t[1] - t[0]))
    env = Envelope(t=t, samples=f, carrier=5.0)
    assert temporal_filter(2.0 * f.conj(), env) == pytest.approx(2.0, rel=1e-12)
    # a detuned record averages out once the carrier offset is applied
    rec = 2.0 * f.conj() * np.exp(-2j * math.pi * 1000.0 * 0.01 * t)
    assert temporal_filter(rec, env, reference=4.99) == pytest.approx(2.0, rel=1e-9)
    with pytest.raises(UsageError, match="grid-mismatch"):
        temporal_filter(np.ones(3), env)


def test_normalization(params):
    assert target_occupation(1.7, 20.8) == pytest.approx(1.7 / (1.7 + 1 / (2 * math.pi * 20.8)))
    cal_A = moments_from_state(photonic_state(0.0))
    cal_S = moments_from_state(photonic_state(math.pi))
    half = apply_scales(cal_A, math.sqrt(0.5), 1.0)
    assert half[(1, 1, 0, 0)].real == pytest.approx(0.5)
    s_A, s_S = normalization_scales(1.7, 1.7, params, half, cal_S)
    out = apply_scales(half, s_A, s_S)
    assert out.stage == "normalized"
    assert out[(1, 1, 0, 0)].real == pytest.approx(target_occupation(1.7, params.T1_ge))
    with pytest.raises(NumericalError, match="cannot-normalize"):
        normalization_scales(1.7, 1.7, params, cal_S, cal_S)
