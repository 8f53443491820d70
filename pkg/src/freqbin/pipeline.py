"""End-to-end experiments: emit, capture, measure moments, denoise and reconstruct."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .detection import (
    MomentSet,
    NoiseModel,
    apply_scales,
    denoise_moments,
    moments_from_state,
    normalization_scales,
    synthesize_raw_moments,
)
from .dynamics import EmissionModel, calibrate_envelopes, emission_model, simulate_emission
from .parallel import parallel_map
from .qlinalg import DensityMatrix, state_fidelity
from .tomography import (
    CholeskyAnsatz,
    ProcessMatrix,
    cardinal_inputs,
    gd_qst,
    ls_qst,
    photonic_state,
    process_fidelity,
    project_logical,
    qpt,
)


@dataclass
class Setup:
    model: EmissionModel
    envelopes: dict


def prepare(params=None, eta: float = 1.1, ideal: bool = False, dt: float = 1e-3, use_numba=None) -> Setup:
    model = emission_model(params, eta=eta, ideal=ideal, dt=dt, use_numba=use_numba)
    envs, _, _ = calibrate_envelopes(model)
    return Setup(model, envs)


@dataclass
class StateRun:
    theta: float
    phase: float
    captured: DensityMatrix
    ideal: MomentSet
    raw: MomentSet | None
    reference: MomentSet | None
    denoised: MomentSet
    fidelity_captured: float
    reconstructed: DensityMatrix | None = None
    fidelity: float = float("nan")
    flags: list = field(default_factory=list)


def _capture_and_measure(args):
    setup, theta, phase, noise, seed_seq = args
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        _, st = simulate_emission(theta, model=setup.model, envelopes=setup.envelopes, phase=phase)
    ideal = moments_from_state(st)
    if noise is None:
        raw = ref = None
        den = ideal.with_stage("denoised")
    else:
        rng = np.random.default_rng(seed_seq)
        raw, ref = synthesize_raw_moments(ideal, noise, rng=rng)
        den = denoise_moments(raw, ref)
    fid = state_fidelity(photonic_state(theta, phase), st)
    flags = sorted({getattr(w.message, "flag", str(w.message)) for w in caught})
    return StateRun(theta, phase, st, ideal, raw, ref, den, fid, flags=flags)


def reconstruct(moments: MomentSet, method: str = "ls", rank: int = 4, seed: int = 0) -> DensityMatrix:
    if method == "ls":
        return ls_qst(moments)
    if method == "gd":
        return gd_qst(moments, CholeskyAnsatz(rank=rank, seed=seed))
    raise ValueError(f"unknown method {method}")


def measure_states(setup: Setup, points, noise: NoiseModel | None = None, seed: int | None = None,
                   method: str = "ls", rank: int = 4, normalize: bool = False, jobs: int = 1) -> list:
    """Run ``points = [(theta, phase), ...]`` through capture, moments and reconstruction.

    Noise streams are spawned per point from ``seed``, so results do not depend on
    ``jobs``.  ``normalize`` rescales with calibration runs at theta = 0 and pi.
    """
    points = list(points)
    extra = [(0.0, 0.0), (math.pi, 0.0)] if normalize else []
    allp = points + extra
    children = np.random.SeedSequence(0 if seed is None else seed).spawn(len(allp))
    runs = parallel_map(_capture_and_measure, [(setup, t, ph, noise, c) for (t, ph), c in zip(allp, children)],
                        jobs=jobs)
    runs, calib = runs[: len(points)], runs[len(points):]
    if normalize:
        envs = setup.envelopes
        s_A, s_S = normalization_scales(envs["A"].Gamma_eff, envs["S"].Gamma_eff, setup.model.params,
                                        calib[0].denoised, calib[1].denoised)
        for r in runs:
            r.denoised = apply_scales(r.denoised, s_A, s_S)
    for r in runs:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            r.reconstructed = reconstruct(r.denoised, method, rank)
        r.flags += sorted({getattr(w.message, "flag", str(w.message)) for w in caught})
        r.fidelity = state_fidelity(photonic_state(r.theta, r.phase), r.reconstructed)
    return runs


@dataclass
class ProcessRun:
    chi: ProcessMatrix  # trace preserving, renormalized logical outputs
    chi_lossy: ProcessMatrix  # trace non-increasing, vacuum weight counted as failure
    fidelity: float
    fidelity_lossy: float
    states: list


def measure_process(setup: Setup, noise: NoiseModel | None = None, seed: int | None = None,
                    method: str = "ls", rank: int = 4, normalize: bool = False, jobs: int = 1) -> ProcessRun:
    cards = cardinal_inputs()
    runs = measure_states(setup, [(t, ph) for t, ph, _ in cards], noise, seed, method, rank, normalize, jobs)
    ins = [k for *_, k in cards]
    outs = [project_logical(r.reconstructed)[0] for r in runs]
    outs_lossy = [project_logical(r.reconstructed, renormalize=False)[0] for r in runs]
    ident = ProcessMatrix.identity()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        chi = qpt(ins, outs)
    chi_l = qpt(ins, outs_lossy, trace_preserving=False)
    return ProcessRun(chi, chi_l, process_fidelity(chi, ident), process_fidelity(chi_l, ident), runs)
