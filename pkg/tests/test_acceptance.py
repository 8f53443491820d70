"""Acceptance criteria 1-8.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line with the measured numbers
and then asserts.  Run standalone with ``python3 tests/test_acceptance.py`` or as
part of the pytest suite.
"""

from __future__ import annotations

import contextlib
import filecmp
import io
import math
import sys
import time
import warnings
from functools import lru_cache
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from conftest import random_density, random_unitary  # noqa: E402
from freqbin.cli import main as cli_main  # noqa: E402
from freqbin.detection import (  # noqa: E402
    NoiseModel,
    denoise_moments,
    moments_from_state,
    synthesize_raw_moments,
)
from freqbin.device import calibrate_drives, hybridize, load_params  # noqa: E402
from freqbin.dynamics import (  # noqa: E402
    TWO_PI,
    SystemSpec,
    cascaded_capture,
    emission_model,
    emitter_observables,
    emitter_system,
    encoded_state,
    evolve,
    filtered_moments,
    initial_emitter_state,
    spectroscopy_sweep,
)
from freqbin.heralding import LossChannel, remote_entanglement, transfer  # noqa: E402
from freqbin.pipeline import measure_process, prepare  # noqa: E402
from freqbin.qlinalg import DensityMatrix, annihilation, state_fidelity, trace_distance  # noqa: E402
from freqbin.tomography import (  # noqa: E402
    CholeskyAnsatz,
    ProcessMatrix,
    _Quadratic,
    build_sensing_matrix,
    cardinal_inputs,
    gd_gradient,
    gd_loss,
    gd_qst,
    ls_qst,
    photonic_state,
    process_fidelity,
    qpt,
)

SHOTS = 5_000_000
SEED = 20
TARGETS = {0.0: 0.955, math.pi / 2: 0.952, math.pi: 0.951}


ACCEPTANCE_LINES: list = []  # echoed by the terminal summary hook in conftest


def report(n: int, ok: bool, detail: str):
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@lru_cache(maxsize=None)
def _setup(ideal: bool):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return prepare(ideal=ideal)


@lru_cache(maxsize=None)
def _decoherent_process():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return measure_process(_setup(False), NoiseModel(shots=SHOTS), seed=SEED, jobs=0)


# ---------------------------------------------------------------- 1


def test_criterion_1_hybridization_and_spectroscopy():
    params = load_params()
    bare = hybridize(params, g_dc=0.0)
    split_err = abs(bare.splitting_MHz - 2 * params.g_ec)
    frame = hybridize(params)
    res = {"A": frame.omega_A - params.omega_D_ge, "S": frame.omega_S - params.omega_D_ge}
    step = 1e-3
    grid = np.arange(0.60, 0.80 + step / 2, step)
    t0 = time.perf_counter()
    surf = spectroscopy_sweep("param", grid, [0.0, 1.1], params, frame)
    runtime = time.perf_counter() - t0
    dips = surf.dips(-1)
    off = [abs(dips[0] - res["A"]), abs(dips[1] - res["S"])] if dips.size == 2 else [math.inf]
    ok = split_err < 1e-9 and max(off) <= step + 1e-12 and runtime < 60.0
    report(1, ok, f"2g split error {split_err:.1e} MHz (92 MHz); dressed splitting {frame.splitting_MHz:.3f} MHz; "
                  f"dip offsets {[f'{1e3 * o:.3f}' for o in off]} MHz (step {1e3 * step:.1f} MHz); "
                  f"sweep {runtime:.1f} s")


# ---------------------------------------------------------------- 2


def test_criterion_2_ideal_pipeline():
    s = _setup(True)
    fids, mom_err, worst_high = [], 0.0, 0.0
    for theta in (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4, math.pi):
        st = cascaded_capture(s.model, encoded_state(theta), s.envelopes).state
        fids.append(state_fidelity(photonic_state(theta), st))
        m = moments_from_state(st)
        mom_err = max(mom_err,
                      abs(m[(1, 1, 0, 0)].real - math.cos(theta / 2) ** 2),
                      abs(m[(0, 0, 1, 1)].real - math.sin(theta / 2) ** 2),
                      abs(abs(m[(1, 0, 0, 1)]) - math.sin(theta) / 2))
        high = [m[(0, 1, 0, 1)]] + [m[ix] for ix in m.indices() if sum(ix) == 4]
        worst_high = max(worst_high, max(abs(v) for v in high))
    ok = min(fids) >= 0.99 and mom_err <= 0.01 and worst_high < 0.02
    report(2, ok, f"min captured fidelity {min(fids):.5f} (>= 0.99); moment error {mom_err:.2e} (<= 0.01); "
                  f"max |<a_A a_S>|, |4th order| {worst_high:.2e} (< 0.02)")


# ---------------------------------------------------------------- 3


def test_criterion_3_decoherent_reproduction():
    t0 = time.perf_counter()
    pr = _decoherent_process()
    runtime = time.perf_counter() - t0
    fids = {r.theta: r.fidelity for r in pr.states if r.phase == 0.0}
    devs = {t: fids[t] - TARGETS[t] for t in TARGETS}
    ok_states = all(abs(d) <= 0.02 for d in devs.values())
    ok_proc = 0.93 <= pr.fidelity_lossy <= 0.97
    ok = ok_states and ok_proc and runtime < 600
    fid_txt = ", ".join(f"{fids[t]:.4f} vs {TARGETS[t]:.3f}" for t in TARGETS)
    report(3, ok, f"state fidelities {fid_txt} (+-0.02); F_proc {pr.fidelity_lossy:.4f} in [0.93, 0.97] "
                  f"(renormalized-TP variant {pr.fidelity:.4f}); runtime {runtime:.0f} s")


# ---------------------------------------------------------------- 4


def test_criterion_4_moment_pipeline():
    rt = 0.0
    for seed in range(10):
        ideal = moments_from_state(DensityMatrix((2, 2), random_density(4, seed=seed)))
        raw, ref = synthesize_raw_moments(ideal, NoiseModel(n_added=2.1))
        den = denoise_moments(raw, ref)
        rt = max(rt, max(abs(den[ix] - ideal[ix]) for ix in ideal.indices()))

    ideal = moments_from_state(photonic_state(math.pi / 2))
    idx = [ix for ix in ideal.indices() if ix != (0, 0, 0, 0)]

    def spread(shots, seed):
        rng = np.random.default_rng(seed)
        errs = []
        for _ in range(100):
            raw, ref = synthesize_raw_moments(ideal, NoiseModel(n_added=2.1, shots=shots), rng)
            den = denoise_moments(raw, ref)
            errs.append([den[ix] - ideal[ix] for ix in idx])
        return np.sqrt(np.mean(np.abs(np.array(errs)) ** 2, axis=0))

    hi = spread(SHOTS, 1)
    lo = spread(SHOTS // 4, 2)
    ratio = lo / hi  # 1/sqrt(n) predicts 2
    agg = float(np.sqrt(np.mean(lo**2) / np.mean(hi**2)))
    med = float(np.median(ratio))
    ok = rt < 1e-10 and abs(agg / 2 - 1) <= 0.2 and abs(med / 2 - 1) <= 0.2
    report(4, ok, f"round trip {rt:.1e} (< 1e-10); std ratio n/4 vs n: aggregate {agg:.3f}, "
                  f"median over {len(idx)} moments {med:.3f} (2 +- 20%)")


# ---------------------------------------------------------------- 5


def test_criterion_5_solver_cross_validation():
    rng = np.random.default_rng(7)
    worst_td = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in range(50):
            rank = 1 + k % 4
            rho = DensityMatrix((2, 2), random_density(4, rank=rank, seed=1000 + k))
            raw, ref = synthesize_raw_moments(moments_from_state(rho), NoiseModel(shots=SHOTS), rng)
            d = denoise_moments(raw, ref)
            worst_td = max(worst_td, trace_distance(ls_qst(d), gd_qst(d, CholeskyAnsatz(rank=4))))

    sm = build_sensing_matrix()
    B = sm.apply(random_density(4, seed=3))
    B = B + 0.02 * (rng.normal(size=B.size) + 1j * rng.normal(size=B.size))
    q = _Quadratic(sm.matrix, B)
    T = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    g = gd_gradient(T, q)
    num = np.zeros_like(T)
    h = 1e-6
    for idx in np.ndindex(T.shape):
        for unit in (1.0, 1j):
            E = np.zeros_like(T)
            E[idx] = unit * h
            num[idx] += unit * (gd_loss(T + E, q) - gd_loss(T - E, q)) / (2 * h)
    grad_err = float(np.linalg.norm(g - num) / np.linalg.norm(num))

    U = random_unitary(2, seed=11)
    ins = [k for *_, k in cardinal_inputs()]
    pm = qpt(ins, [U @ np.outer(k, k.conj()) @ U.conj().T for k in ins])
    f_unitary = process_fidelity(pm, ProcessMatrix.from_unitary(U))

    pr = _decoherent_process()
    f1, f4 = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for r in pr.states:
            target = photonic_state(r.theta, r.phase)
            f1.append(state_fidelity(target, gd_qst(r.denoised, CholeskyAnsatz(rank=1))))
            f4.append(state_fidelity(target, gd_qst(r.denoised, CholeskyAnsatz(rank=4))))
    ok_rank = all(a > b for a, b in zip(f1, f4))
    ok = worst_td < 0.02 and grad_err < 1e-5 and f_unitary >= 0.9999 and ok_rank
    report(5, ok, f"LS vs GD4 max trace distance {worst_td:.2e} over 50 (< 0.02); gradient rel. error "
                  f"{grad_err:.1e} (< 1e-5); random-unitary F_proc {f_unitary:.6f} (>= 0.9999); "
                  f"mean GD fidelity rank-1 {np.mean(f1):.4f} > rank-4 {np.mean(f4):.4f}")


# ---------------------------------------------------------------- 6


def test_criterion_6_heralding():
    thetas = np.linspace(0, math.pi, 21)
    ps = np.linspace(0, 1, 21)
    worst_gap, eq_fid, eq_flag, skipped = math.inf, 0.0, 0.0, 0
    for theta in thetas:
        for p in ps:
            for p_S in (p, 0.5 * p, 0.0):
                out, unh = transfer(float(theta), LossChannel(float(p), float(p_S)))
                if math.isnan(out.fidelity_success):
                    skipped += 1  # every run flagged: heralded fidelity undefined
                    continue
                worst_gap = min(worst_gap, out.fidelity_success - unh)
                if p_S == p:
                    eq_fid = max(eq_fid, abs(out.fidelity_success - 1.0))
                    eq_flag = max(eq_flag, abs(out.p_flag - p))
    bell = remote_entanglement(math.pi / 2, LossChannel()).outcome.fidelity_success
    ok = worst_gap >= -1e-12 and eq_fid < 1e-9 and eq_flag < 1e-9 and bell >= 0.999
    report(6, ok, f"min(F_heralded - F_unheralded) {worst_gap:.2e} (>= 0) over 21x21 grid x 3 loss ratios "
                  f"({skipped} all-flagged points skipped); equal-loss |F_h - 1| {eq_fid:.1e}, "
                  f"|p_flag - p| {eq_flag:.1e} (< 1e-9); Bell fidelity {bell:.6f}")


# ---------------------------------------------------------------- 7


def test_criterion_7_dynamics():
    params = load_params()
    frame = hybridize(params)
    kappa = 3.0
    spec = SystemSpec(dims=(2,))
    spec.add_collapse(annihilation(2).data, kappa)
    tr = evolve(np.diag([0.0, 1.0]).astype(complex), spec, 1.0, 1e-3, observables={"n": np.diag([0.0, 1.0])})
    err_decay = float(np.max(np.abs(tr.expect["n"].real - np.exp(-kappa * tr.t))))

    m = emission_model(params)
    drive = calibrate_drives(frame, params, 1.1).replace(zeta=0.0)
    rabi = emitter_system(params, drive, frame, qubit_decoherence=False, coupler_decoherence=False,
                          waveguide=False)
    tr = evolve(initial_emitter_state(encoded_state(0.0)), rabi, 1.0, 1e-3, observables=emitter_observables())
    err_rabi = float(np.max(np.abs(tr.expect["P_e"].real - np.cos(TWO_PI * drive.eta * tr.t) ** 2)))

    tr = evolve(initial_emitter_state(encoded_state(1.0)), m.system(), m.nsteps * m.dt, m.dt, store_states=True,
                record_every=4)
    err_trace = float(np.max(np.abs(np.einsum("tii->t", tr.states) - 1.0)))

    s = _setup(False)
    err_routes = 0.0
    for theta, phase in ((math.pi / 2, 0.0), (1.0, 0.5)):
        ket = encoded_state(theta, phase)
        fm = filtered_moments(s.model, ket, s.envelopes)
        cm = moments_from_state(cascaded_capture(s.model, ket, s.envelopes).state)
        err_routes = max(err_routes, max(abs(fm[k] - cm[k]) for k in fm))
    ok = err_trace < 1e-6 and err_decay < 1e-6 and err_rabi < 1e-6 and err_routes < 1e-2
    report(7, ok, f"trace drift {err_trace:.1e}; damped emitter {err_decay:.1e}; Rabi {err_rabi:.1e} (< 1e-6); "
                  f"capture vs regression-theorem moments {err_routes:.1e} (< 1e-2)")


# ---------------------------------------------------------------- 8


def test_criterion_8_determinism(tmp_path):
    runs = [
        ["tomography", "--seed", "3", "--thetas", "0,pi/2"],
        ["tomography", "--seed", "3", "--kind", "process", "--method", "gd", "--ideal"],
        ["moments", "--seed", "9", "--theta", "pi/3"],
        ["herald", "--p-grid", "0:1:21", "--p-S", "0.1"],
        ["spectroscopy", "--freq-start", "0.64", "--freq-stop", "0.66", "--amps", "0,1.1"],
        ["emit", "--theta", "pi/2"],
    ]
    mismatched, files = [], 0
    for i, args in enumerate(runs):
        dirs = []
        for rep, jobs in enumerate(("1", "2")):
            d = tmp_path / f"run{i}_{rep}"
            with contextlib.redirect_stdout(io.StringIO()):  # cli prints output paths
                code = cli_main([*args, "--jobs", jobs, "--out", str(d)])
            assert code == 0, args
            dirs.append(d)
        names = sorted(p.name for p in dirs[0].iterdir())
        files += len(names)
        _, bad, err = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
        mismatched += bad + err
        for name in names:
            with open(dirs[0] / name) as fh:
                if not fh.readline().startswith("# freqbin-lab v"):
                    mismatched.append(f"{name}: header")
    ok = not mismatched
    report(8, ok, f"{files} files from {len(runs)} commands byte-identical across repeat runs "
                  f"(jobs 1 vs 2); mismatches {mismatched or 'none'}")


if __name__ == "__main__":
    import tempfile

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion"):
            try:
                if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
