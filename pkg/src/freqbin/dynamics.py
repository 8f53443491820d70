"""Lindblad dynamics of the driven emitter, photon envelopes and cascaded capture.

Conventions
-----------
* Hamiltonians are assembled in MHz (H / 2 pi) and converted to rad/us once, when
  the Liouvillian is built.  Collapse operators carry ``sqrt(rate)`` with rates in
  1/us.  Times are in us.
* Subsystem order is qubit D (3 levels), hybrid mode A, hybrid mode S, then the
  optional capture cavities v_A, v_S (2 levels each).
* The rotating frame removes the bare frequencies and the anharmonicity of qubit D
  (``alpha/2 d^dag^2 d^2``), so the two-photon drive is static at resonance and
  every remaining rate is MHz scale.  ``keep_offresonant=True`` restores the
  ``f <-> e`` branch of the parametric drive, which then oscillates at ``alpha``.
* An envelope ``f(t)`` is the temporal filter: the captured mode is
  ``a_k = int f(t) a_out(t) dt`` and the output correlation reads
  ``G[i, j] = <a_out^dag(t_i) a_out(t_j)> = n f(t_i) conj(f(t_j))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

from . import HEADER, _kernels
from .device import (
    DeviceParams,
    DriveConfig,
    HybridizedFrame,
    ac_stark,
    epsilon_from_zeta,
    hybridize,
    parametric_overlap,
)
from .errors import FreqbinWarning, NumericalError, UsageError
from .qlinalg import DensityMatrix, annihilation, embed, partial_trace

TWO_PI = 2.0 * math.pi
_trapz = getattr(np, "trapezoid", None) or np.trapz
D_DIM = 3
MODE_DIM = 2
EMITTER_DIMS = (D_DIM, MODE_DIM, MODE_DIM)
CAPTURE_DIMS = EMITTER_DIMS + (MODE_DIM, MODE_DIM)

Coef = Optional[Callable[[np.ndarray], np.ndarray]]


@dataclass
class SystemSpec:
    """Open system: H(t) = sum_k c_k(t) H_k (MHz), collapse L_j(t) = sum_m c_jm(t) B_jm."""

    dims: tuple
    h_terms: list = field(default_factory=list)  # [(matrix, coef or None)]
    collapse: list = field(default_factory=list)  # [[(matrix, coef or None), ...], ...]
    frame: str = "H0 + anharmonicity of D"
    labels: tuple = ()

    def __post_init__(self):
        if int(np.prod(self.dims)) > 192:
            raise UsageError("invalid-dimension", f"total dimension {np.prod(self.dims)} > 192")

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    def add_h(self, op, coef: Coef = None):
        self.h_terms.append((np.asarray(op, dtype=complex), coef))

    def add_collapse(self, op, rate: float, coef: Coef = None):
        if rate < 0:
            raise UsageError("invalid-parameter", f"negative collapse rate {rate}")
        if rate > 0:
            self.collapse.append([(math.sqrt(rate) * np.asarray(op, dtype=complex), coef)])

    def hamiltonian(self, t: float) -> np.ndarray:
        h = np.zeros((self.n, self.n), dtype=complex)
        for op, c in self.h_terms:
            h += op if c is None else complex(np.asarray(c(np.array([t])))[0]) * op
        return h


@dataclass
class Trajectory:
    t: np.ndarray
    expect: dict
    states: Optional[np.ndarray] = None  # (T, N, N)
    final: Optional[np.ndarray] = None

    def to_csv(self, path, names=None):
        names = list(self.expect) if names is None else names
        with open(path, "w") as fh:
            fh.write(HEADER + "\n")
            fh.write("t_us," + ",".join(f"{k}_re,{k}_im" for k in names) + "\n")
            for i, t in enumerate(self.t):
                vals = ",".join(f"{self.expect[k][i].real:.12g},{self.expect[k][i].imag:.12g}" for k in names)
                fh.write(f"{t:.9g},{vals}\n")


@dataclass
class Envelope:
    t: np.ndarray  # us
    samples: np.ndarray  # complex filter f(t), 1/sqrt(us)
    carrier: float = 0.0  # GHz
    n: float = 0.0  # photons in this mode
    Gamma_eff: float = float("nan")  # MHz, |f|^2 decay convention
    purity: float = 1.0
    normalized: bool = True
    empty: bool = False

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def norm(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) * self.dt)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(HEADER + "\n")
            fh.write(f"# carrier_GHz={self.carrier:.9g} n={self.n:.12g} Gamma_eff_MHz={self.Gamma_eff:.9g}\n")
            fh.write("t_us,re,im\n")
            for t, s in zip(self.t, self.samples):
                fh.write(f"{t:.9g},{s.real:.12g},{s.imag:.12g}\n")


# ---------------------------------------------------------------- operators


def emitter_operators(dims=EMITTER_DIMS):
    """Ladder operators (d, a_A, a_S[, v_A, v_S]) embedded in the product space."""
    ops = [embed(annihilation(dims[0]), 0, dims).data]
    for k in range(1, len(dims)):
        ops.append(embed(annihilation(dims[k]), k, dims).data)
    return ops


def d_projector(level: int, dims=EMITTER_DIMS) -> np.ndarray:
    p = np.zeros((dims[0], dims[0]))
    p[level, level] = 1.0
    return embed(p, 0, dims).data


def d_transition(i: int, j: int, dims=EMITTER_DIMS) -> np.ndarray:
    """``|i><j|`` on qubit D."""
    p = np.zeros((dims[0], dims[0]))
    p[i, j] = 1.0
    return embed(p, 0, dims).data


def ramp_envelope(duration: float, ramp: float) -> Callable:
    """Unit-height pulse with raised-cosine edges of length ``ramp``."""

    def f(t):
        t = np.asarray(t, dtype=float)
        out = np.ones_like(t)
        if ramp > 0:
            up = t < ramp
            out[up] = 0.5 * (1 - np.cos(np.pi * np.clip(t[up], 0, None) / ramp))
            dn = t > duration - ramp
            out[dn] = 0.5 * (1 - np.cos(np.pi * np.clip(duration - t[dn], 0, None) / ramp))
        out[(t < 0) | (t > duration)] = 0.0
        return out.astype(complex)

    return f


# ---------------------------------------------------------------- Hamiltonian


def build_effective_hamiltonian(params: DeviceParams, frame: HybridizedFrame, drive: DriveConfig,
                                detuning_param: float = 0.0, detuning_2nd: float = 0.0,
                                full_model: bool = False, keep_offresonant: bool = False,
                                coupling_scale: float = 1.0, dims=EMITTER_DIMS,
                                envelope: Coef = None) -> list:
    """Terms ``[(matrix_MHz, coef)]`` of the driven emitter Hamiltonian.

    Base form: ``eta (d^dag a_A + h.c.) + zeta (d^dag^2 a_S + h.c.)`` with the
    drive detunings (MHz, relative to the Stark-compensated drive frequencies)
    appearing as ``-detuning_param n_A + detuning_2nd n_S``.  ``full_model`` adds
    cross-Kerr, displacement Stark and parametric Stark terms together with the
    matching drive-frequency compensation.  ``coupling_scale`` multiplies both
    drive amplitudes (amplitude-convention switch; 1 takes the quoted values
    literally).
    """
    ops = emitter_operators(dims)
    d, aA, aS = ops[0], ops[1], ops[2]
    eta = coupling_scale * drive.eta
    zeta = coupling_scale * drive.zeta
    nA, nS, nD = aA.conj().T @ aA, aS.conj().T @ aS, d.conj().T @ d
    terms = []
    if keep_offresonant:
        # resonant g<->e branch is static; the f<->e branch rotates at alpha
        ge = d_transition(0, 1, dims)  # |g><e| part of d
        ef = d - ge
        x_ge = ge.conj().T @ aA
        x_ef = ef.conj().T @ aA
        alpha = params.alpha_D
        terms.append((eta * (x_ge + x_ge.conj().T), envelope))
        w = TWO_PI * alpha

        def c_plus(t, env=envelope):
            base = np.exp(1j * w * np.asarray(t))
            return base if env is None else base * env(t)

        def c_minus(t, env=envelope):
            base = np.exp(-1j * w * np.asarray(t))
            return base if env is None else base * env(t)

        terms.append((eta * x_ef, c_plus))
        terms.append((eta * x_ef.conj().T, c_minus))
    else:
        # f <-> e branch is detuned by alpha and dropped (rotating-wave approximation)
        x = d_transition(1, 0, dims) @ aA
        terms.append((eta * (x + x.conj().T), envelope))
    d2 = d @ d
    y = d2.conj().T @ aS
    terms.append((zeta * (y + y.conj().T), envelope))

    static = -detuning_param * nA + detuning_2nd * nS
    if full_model:
        chi = params.chi_d
        eps = drive.epsilon
        wac = drive.omega_AC
        s = drive.stark_param
        static = static + wac * nD  # Stark shift of D
        static = static + wac * nA + 2 * wac * nS  # drive-frequency compensation
        static = static + 4 * chi * frame.phi_d ** 2 * (frame.phi_S ** 2 * nD @ nS + frame.phi_A ** 2 * nD @ nA)
        static = static + 4 * eps ** 2 * chi * frame.phi_d ** 2 * (frame.phi_S ** 2 * nS + frame.phi_A ** 2 * nA)
        static = static + s * (
            (frame.phi_dp - frame.phi_dpp) ** 2 * nD
            + (frame.phi_Sp - frame.phi_Spp) ** 2 * nS
            + (frame.phi_Ap - frame.phi_App) ** 2 * nA
        )
    if np.any(static != 0):
        terms.append((static.astype(complex), None))
    return terms


def hamiltonian_matrix(terms, t: float = 0.0) -> np.ndarray:
    n = terms[0][0].shape[0]
    h = np.zeros((n, n), dtype=complex)
    for op, c in terms:
        h += op if c is None else complex(np.asarray(c(np.array([t])))[0]) * op
    return h


# ---------------------------------------------------------------- decoherence


def dephasing_rates(params: DeviceParams):
    """Pure-dephasing rates (1/us) for the |e><e| and |f><f| channels of qubit D.

    ``|e><e|`` at rate gamma_1 dephases g-e and e-f at gamma_1; ``|f><f|`` at
    gamma_2 adds to e-f (and g-f).  T1 contributions are subtracted first and the
    results clamped at zero.
    """
    g_ge = 1.0 / params.T1_ge
    g_ef = 1.0 / params.T1_ef
    r_ge = 1.0 / params.T2_ge - 0.5 * g_ge
    r_ef = 1.0 / params.T2_ef - 0.5 * (g_ge + g_ef)
    gamma1 = max(r_ge, 0.0)
    gamma2 = max(r_ef - gamma1, 0.0)
    return gamma1, gamma2


def emitter_system(params: DeviceParams, drive: DriveConfig, frame: HybridizedFrame = None,
                   qubit_decoherence: bool = True, coupler_decoherence: bool = True,
                   waveguide: bool = True, dims=EMITTER_DIMS, drive_envelope: Coef = None,
                   **hkw) -> SystemSpec:
    """Driven qubit D + hybrid modes with waveguide emission and intrinsic losses."""
    frame = hybridize(params) if frame is None else frame
    spec = SystemSpec(dims=tuple(dims), labels=("D", "A", "S", "vA", "vS")[: len(dims)])
    for op, c in build_effective_hamiltonian(params, frame, drive, dims=dims, envelope=drive_envelope, **hkw):
        spec.add_h(op, c)
    ops = emitter_operators(dims)
    aA, aS = ops[1], ops[2]
    kappa = TWO_PI * params.Gamma_E / 2.0
    if waveguide:
        spec.add_collapse(aA, kappa)
        spec.add_collapse(aS, kappa)
    if qubit_decoherence:
        spec.add_collapse(d_transition(0, 1, dims), 1.0 / params.T1_ge)
        spec.add_collapse(d_transition(1, 2, dims), 1.0 / params.T1_ef)
        g1, g2 = dephasing_rates(params)
        spec.add_collapse(d_projector(1, dims), 2.0 * g1)
        spec.add_collapse(d_projector(2, dims), 2.0 * g2)
    if coupler_decoherence:
        # coupler c = (a_S - a_A)/sqrt2; secular in the hybrid frame (split 2g >> rates)
        spec.add_collapse(aA, 0.5 / params.T1_c)
        spec.add_collapse(aS, 0.5 / params.T1_c)
        gphi = max(1.0 / params.T2_c - 0.5 / params.T1_c, 0.0)
        nA, nS = aA.conj().T @ aA, aS.conj().T @ aS
        spec.add_collapse(0.5 * (nA + nS), 2.0 * gphi)
        spec.add_collapse(0.5 * aA.conj().T @ aS, 2.0 * gphi)
        spec.add_collapse(0.5 * aS.conj().T @ aA, 2.0 * gphi)
    return spec


# ---------------------------------------------------------------- Liouvillian


def _spre_post(a, b):
    """Superoperator of X -> a X b for row-major vectorization."""
    return sp.kron(sp.csr_matrix(a), sp.csr_matrix(b).T, format="csr")


def liouvillian_terms(spec: SystemSpec):
    """Split the generator into ``[(sparse superoperator, coef or None)]`` (angular units)."""
    n = spec.n
    eye = sp.identity(n, dtype=complex, format="csr")
    static = sp.csr_matrix((n * n, n * n), dtype=complex)
    varying = []

    def add(m, c):
        nonlocal static
        if c is None:
            static = static + m
        else:
            varying.append((m.tocsr(), c))

    for op, c in spec.h_terms:
        h = sp.csr_matrix(TWO_PI * op)
        add(-1j * (sp.kron(h, eye) - sp.kron(eye, h.T)), c)
    for parts in spec.collapse:
        for bm, cm in parts:
            for bk, ck in parts:
                # coefficient c_m(t) conj(c_k(t)) for B_m rho B_k^dag - 1/2 {B_k^dag B_m, rho}
                bkd_bm = sp.csr_matrix(bk.conj().T @ bm)
                sup = (
                    _spre_post(bm, bk.conj().T)
                    - 0.5 * sp.kron(bkd_bm, eye)
                    - 0.5 * sp.kron(eye, bkd_bm.T)
                )
                if cm is None and ck is None:
                    add(sup, None)
                else:
                    add(sup, _product_coef(cm, ck))
    static.eliminate_zeros()
    return [(static, None)] + varying


def _product_coef(cm, ck):
    def f(t):
        a = np.ones(np.shape(t), complex) if cm is None else np.asarray(cm(t), complex)
        b = np.ones(np.shape(t), complex) if ck is None else np.asarray(ck(t), complex)
        return a * np.conj(b)

    return f


class Propagator:
    """Precomputed generator for repeated RK4 runs over a fixed time grid."""

    def __init__(self, spec: SystemSpec, dt: float, nsteps: int, t0: float = 0.0, use_numba=None):
        self.spec = spec
        self.dt = float(dt)
        self.nsteps = int(nsteps)
        self.t0 = float(t0)
        self.use_numba = use_numba
        terms = liouvillian_terms(spec)
        self.ops = _kernels.StackedCSR([m for m, _ in terms])
        th = self.t0 + 0.5 * self.dt * np.arange(2 * self.nsteps + 1)
        self.coeffs = np.empty((len(terms), th.size), dtype=complex)
        for k, (_, c) in enumerate(terms):
            self.coeffs[k] = 1.0 if c is None else np.asarray(c(th), dtype=complex)

    def evolve(self, x0, stride=1):
        return _kernels.evolve(self.ops, self.coeffs, x0, self.dt, self.nsteps, stride, self.use_numba)

    def correlate(self, src, obs, stride=1):
        return _kernels.correlate(self.ops, self.coeffs, src, obs, self.dt, self.nsteps, stride, self.use_numba)


def _check_step(spec: SystemSpec, dt: float, t_end: float):
    scale = 0.0
    for t in (0.0, 0.5 * t_end, t_end):
        h = spec.hamiltonian(t)
        if h.size:
            scale = max(scale, TWO_PI * float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (h + h.conj().T))))))
    if scale > 0 and dt > 1.0 / (20.0 * scale) * (1 + 1e-9):
        raise NumericalError("step-size-too-large", f"dt={dt} us > 1/(20*{scale:.4g} rad/us)")


def evolve(rho0, spec: SystemSpec, t_end: float, dt: float = 1e-3, record_every: int = 1,
           observables: dict | None = None, store_states: bool = False, use_numba=None,
           propagator: Propagator | None = None) -> Trajectory:
    """Fixed-step RK4 integration of the Lindblad equation from t=0 to ``t_end``."""
    rho0 = np.asarray(rho0.data if isinstance(rho0, DensityMatrix) else rho0, dtype=complex)
    n = spec.n
    nsteps = int(round(t_end / dt))
    if nsteps < 1:
        raise UsageError("invalid-parameter", "t_end must exceed dt")
    _check_step(spec, dt, t_end)
    prop = propagator or Propagator(spec, dt, nsteps, use_numba=use_numba)
    xs = prop.evolve(rho0.reshape(-1), stride=record_every)
    rhos = xs.reshape(-1, n, n)
    t = dt * record_every * np.arange(rhos.shape[0])
    tr = np.real(np.einsum("tii->t", rhos))
    if np.max(np.abs(tr - 1.0)) > 1e-6:
        raise NumericalError("step-size-too-large", f"trace drift {np.max(np.abs(tr - 1.0)):.2e}")
    expect = {}
    for name, op in (observables or {}).items():
        expect[name] = np.einsum("ij,tji->t", np.asarray(op), rhos)
    return Trajectory(t=t, expect=expect, states=rhos if store_states else None, final=rhos[-1])


# ---------------------------------------------------------------- emission


def encoded_state(theta: float, phase: float = 0.0) -> np.ndarray:
    """Qubit D after the pi_ef, pi_ge preparation: cos(theta/2)|e> + e^{i phase} sin(theta/2)|f>."""
    return np.array([0.0, math.cos(theta / 2), np.exp(1j * phase) * math.sin(theta / 2)], dtype=complex)


def displaced_state() -> np.ndarray:
    return np.array([0.5, 1 / math.sqrt(2.0), 0.5], dtype=complex)


def initial_emitter_state(d_ket, dims=EMITTER_DIMS) -> np.ndarray:
    psi = np.zeros(int(np.prod(dims)), dtype=complex)
    rest = int(np.prod(dims[1:]))
    psi[::rest][: len(d_ket)] = d_ket
    return np.outer(psi, psi.conj())


def effective_rate_estimate(params: DeviceParams, drive: DriveConfig, coupling_scale=1.0) -> float:
    """Slowest population decay rate (1/us) of the D <-> hybrid-mode exchange."""
    kappa = TWO_PI * params.Gamma_E / 2.0
    rates = []
    for g in (coupling_scale * drive.eta, coupling_scale * math.sqrt(2.0) * drive.zeta):
        g = TWO_PI * g
        if g == 0:
            continue
        disc = kappa ** 2 / 16.0 - g ** 2
        amp = kappa / 4.0 - (math.sqrt(disc) if disc > 0 else 0.0)
        rates.append(2.0 * amp)
    return min(rates) if rates else 0.0


def emission_duration(params: DeviceParams, drive: DriveConfig, coupling_scale=1.0) -> float:
    if drive.duration > 0:
        return drive.duration
    g = effective_rate_estimate(params, drive, coupling_scale)
    if g <= 0:
        raise UsageError("invalid-parameter", "drive amplitudes are zero; set an explicit duration")
    return 10.0 / g + 2 * drive.ramp


@dataclass
class EmissionModel:
    """Everything needed to simulate one emission run."""

    params: DeviceParams
    drive: DriveConfig
    frame: HybridizedFrame = None
    dt: float = 1e-3
    qubit_decoherence: bool = True
    coupler_decoherence: bool = True
    full_model: bool = False
    coupling_scale: float = 1.0
    use_numba: Optional[bool] = None
    corr_stride: int = 4

    def __post_init__(self):
        if self.frame is None:
            self.frame = hybridize(self.params)

    @property
    def duration(self) -> float:
        return emission_duration(self.params, self.drive, self.coupling_scale)

    @property
    def nsteps(self) -> int:
        n = int(math.ceil(self.duration / self.dt))
        return n + (-n) % self.corr_stride

    def system(self, dims=EMITTER_DIMS, waveguide=True) -> SystemSpec:
        env = ramp_envelope(self.nsteps * self.dt, self.drive.ramp) if self.drive.ramp > 0 else None
        return emitter_system(
            self.params, self.drive, self.frame,
            qubit_decoherence=self.qubit_decoherence,
            coupler_decoherence=self.coupler_decoherence,
            dims=dims, drive_envelope=env, waveguide=waveguide,
            full_model=self.full_model, coupling_scale=self.coupling_scale,
        )

    def ideal(self) -> "EmissionModel":
        import dataclasses

        return dataclasses.replace(self, qubit_decoherence=False, coupler_decoherence=False)


def emitter_observables(dims=EMITTER_DIMS) -> dict:
    ops = emitter_operators(dims)
    obs = {
        "P_g": d_projector(0, dims),
        "P_e": d_projector(1, dims),
        "P_f": d_projector(2, dims),
        "n_A": ops[1].conj().T @ ops[1],
        "n_S": ops[2].conj().T @ ops[2],
        "a_A": ops[1],
        "a_S": ops[2],
    }
    if len(dims) > 3:
        obs["n_vA"] = ops[3].conj().T @ ops[3]
        obs["n_vS"] = ops[4].conj().T @ ops[4]
    return obs


def run_emitter(model: EmissionModel, d_ket, store_states=True) -> Trajectory:
    spec = model.system()
    rho0 = initial_emitter_state(d_ket)
    return evolve(rho0, spec, model.nsteps * model.dt, model.dt, record_every=model.corr_stride,
                  observables=emitter_observables(), store_states=store_states,
                  use_numba=model.use_numba)


# ---------------------------------------------------------------- correlations


def _obs_vec(op) -> np.ndarray:
    """Row vector o with o . vec(X) = Tr(op X)."""
    return np.asarray(op, dtype=complex).T.reshape(-1)


def correlation_matrices(model: EmissionModel, d_ket, channels=("A", "S")):
    """Two-time correlations of the waveguide output, via the quantum regression theorem.

    Returns ``(t, G, traj)`` with ``G[(k, l)][i, j] = <L_k^dag(t_i) L_l(t_j)>`` for
    every ordered channel pair.
    """
    spec = model.system()
    n = spec.n
    nsteps = model.nsteps
    stride = model.corr_stride
    _check_step(spec, model.dt, nsteps * model.dt)
    prop = Propagator(spec, model.dt, nsteps, use_numba=model.use_numba)
    rho0 = initial_emitter_state(d_ket)
    xs = prop.evolve(rho0.reshape(-1), stride=stride)
    rhos = xs.reshape(-1, n, n)
    t = model.dt * stride * np.arange(rhos.shape[0])
    kappa = TWO_PI * model.params.Gamma_E / 2.0
    ops = emitter_operators()
    L = {"A": math.sqrt(kappa) * ops[1], "S": math.sqrt(kappa) * ops[2]}
    obs = np.stack([_obs_vec(L[c].conj().T) for c in channels])
    # g[o, r1, r2] = <L_o^dag(t_r2) L_src(t_r1)>, r2 >= r1
    lower = {}
    for c in channels:
        src = np.einsum("ij,tjk->tik", L[c], rhos).reshape(rhos.shape[0], -1)
        lower[c] = prop.correlate(src, obs, stride=stride)
    G = {}
    T = t.size
    iu = np.triu_indices(T)
    for a_i, a in enumerate(channels):
        for b in channels:
            g = np.zeros((T, T), dtype=complex)
            # t1 >= t2: <L_a^dag(t1) L_b(t2)> from source L_b, observable L_a^dag
            gl = lower[b][a_i]  # [r2(src time), r1]
            g[iu[1], iu[0]] = gl[iu]
            # t2 > t1: conj(<L_b^dag(t2) L_a(t1)>) from source L_a, observable L_b^dag
            gu = lower[a][channels.index(b)]  # [r1 src, r2]
            mask = iu[0] != iu[1]
            g[iu[0][mask], iu[1][mask]] = np.conj(gu[iu][mask])
            G[(a, b)] = g
    traj = Trajectory(t=t, expect={k: np.einsum("ij,tji->t", v, rhos) for k, v in emitter_observables().items()},
                      states=rhos)
    return t, G, traj


def two_time_correlation(model: EmissionModel, d_ket, channel="A"):
    """``G2[i, j] = <L^dag(t_i) L(t_j)>`` for one decay channel, Hermitian by construction."""
    if channel not in ("A", "S"):
        raise UsageError("invalid-channel", channel)
    t, G, _ = correlation_matrices(model, d_ket, channels=(channel,))
    g = G[(channel, channel)]
    return t, 0.5 * (g + g.conj().T)


def mode_decompose(G2, dt: float, t=None, carrier: float = 0.0, purity_warn: float = 0.95) -> Envelope:
    """Dominant temporal mode of ``G2 = n f f^dag``: photon number and normalized filter.

    The global phase is fixed so that ``f`` is real and positive at its peak.
    """
    G2 = np.asarray(G2, dtype=complex)
    T = G2.shape[0]
    t = dt * np.arange(T) if t is None else np.asarray(t)
    if np.max(np.abs(G2), initial=0.0) < 1e-14:
        return Envelope(t=t, samples=np.zeros(T, complex), carrier=carrier, n=0.0, purity=0.0,
                        normalized=False, empty=True)
    herm = np.max(np.abs(G2 - G2.conj().T))
    if herm > 1e-8 * max(1.0, np.max(np.abs(G2))):
        raise NumericalError("not-hermitian", f"G2 asymmetry {herm:.2e}")
    w, v = np.linalg.eigh(0.5 * (G2 + G2.conj().T) * dt)
    if w[0] < -1e-8 * max(1.0, w[-1]):
        raise NumericalError("not-positive", f"G2 min eigenvalue {w[0]:.2e}")
    n = float(w[-1])
    f = v[:, -1] / math.sqrt(dt)
    k = int(np.argmax(np.abs(f)))
    f = f * np.exp(-1j * np.angle(f[k]))
    total = float(np.sum(np.clip(w, 0, None)))
    purity = n / total if total > 0 else 0.0
    if purity < purity_warn:
        warnings.warn(FreqbinWarning("multimode-emission", f"purity {purity:.4f}"), stacklevel=2)
    return Envelope(t=t, samples=f, carrier=carrier, n=n, purity=purity)


def fit_exponential_decay(envelope, t=None, floor: float = 0.02, monotone_tol: float = 0.05) -> float:
    """Decay rate (MHz, population convention) from a log-linear fit of |f| after its peak.

    ``|f| ~ exp(-Gamma t / 2)``; returns ``Gamma / 2 pi``.  Samples below ``floor``
    of the peak are excluded.  Oscillating (underdamped) tails are fitted through
    their local maxima with an ``underdamped-envelope`` warning.
    """
    if isinstance(envelope, Envelope):
        t, f = envelope.t, envelope.samples
    else:
        f = np.asarray(envelope)
        if t is None:
            raise UsageError("invalid-parameter", "time grid required")
    mag = np.abs(np.asarray(f))
    t = np.asarray(t, dtype=float)
    if mag.size < 3 or np.max(mag) <= 0:
        raise NumericalError("fit-failed", "empty envelope")
    k = int(np.argmax(mag))
    tail = mag[k:]
    tt = t[k:]
    keep = tail > floor * mag[k]
    if np.count_nonzero(keep) < 3:
        raise NumericalError("fit-failed", "no decaying tail after the peak")
    tail, tt = tail[keep], tt[keep]
    # rises beyond tolerance mean no plain exponential tail; an underdamped (oscillating)
    # envelope is fitted through its local maxima instead
    running_min = np.minimum.accumulate(tail)
    if np.max(tail / running_min) > 1 + monotone_tol:
        from scipy.signal import find_peaks

        pk, _ = find_peaks(tail)
        pk = np.concatenate([[0], pk])
        if pk.size < 3 or np.any(np.diff(tail[pk]) >= 0):
            raise NumericalError("fit-failed", "non-monotone tail")
        warnings.warn(FreqbinWarning("underdamped-envelope", "decay fitted through oscillation maxima"),
                      stacklevel=2)
        tail, tt = tail[pk], tt[pk]
    slope, _ = np.polyfit(tt, np.log(tail), 1)
    gamma = -2.0 * slope
    if not gamma > 0 or (tt[-1] - tt[0]) * gamma < 0.1:
        raise NumericalError("fit-failed", f"no measurable decay (rate {gamma:.3g} 1/us)")
    return gamma / TWO_PI


def calibrate_envelopes(model: EmissionModel, d_ket=None):
    """Filters for both modes from the displaced preparation, which emits into both."""
    d_ket = displaced_state() if d_ket is None else d_ket
    t, G, traj = correlation_matrices(model, d_ket)
    dt = t[1] - t[0]
    envs = {}
    for c, w in (("A", model.frame.omega_A), ("S", model.frame.omega_S)):
        g = G[(c, c)]
        env = mode_decompose(0.5 * (g + g.conj().T), dt, t=t, carrier=w)
        if not env.empty:
            try:
                env.Gamma_eff = fit_exponential_decay(env)
            except NumericalError:
                env.Gamma_eff = float("nan")
        envs[c] = env
    return envs, G, traj


# ---------------------------------------------------------------- capture


@dataclass
class CaptureResult:
    state: DensityMatrix  # joint (v_A, v_S)
    captured: dict  # mean photon number per capture cavity
    emitted: dict  # n from the envelopes
    efficiency: float
    sender_residual: float
    trajectory: Trajectory


def _capture_rate(env: Envelope, dt_fine: float, g_max: float, conjugate: bool):
    """Complex capture coupling g(t) on an arbitrary time array (1/sqrt(us))."""
    t = env.t
    f = env.samples
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (np.abs(f[1:]) ** 2 + np.abs(f[:-1]) ** 2) * np.diff(t))])
    re = CubicSpline(t, f.real)
    im = CubicSpline(t, f.imag)
    cs = CubicSpline(t, cum)
    onset = t[np.argmax(np.abs(f) > 1e-6 * np.max(np.abs(f)))] + dt_fine

    def g(tq):
        tq = np.asarray(tq, dtype=float)
        fv = re(tq) + 1j * im(tq)
        if conjugate:
            fv = np.conj(fv)
        den = np.sqrt(np.clip(cs(tq), 1e-300, None))
        out = -fv / den
        mag = np.abs(out)
        big = mag > g_max
        out[big] *= g_max / mag[big]
        out[(tq < onset) | (tq > t[-1])] = 0.0
        return out

    return g


def cascaded_capture(model: EmissionModel, d_ket, envelopes: dict, strict: bool = True,
                     g_max: float | None = None, conjugate: bool = False,
                     tol: float = 0.02) -> CaptureResult:
    """Sender + two virtual cavities in the cascaded formalism; returns the caught state.

    Capture cavity k couples through ``L_k = sqrt(kappa) a_k + g_k^*(t) v_k`` and
    ``H_k = (i/2) sqrt(kappa) (g_k^* a_k^dag v_k - g_k a_k v_k^dag)`` with
    ``g_k(t) = -f_k(t) / sqrt(int_0^t |f_k|^2)``, clamped at ``|g|^2 <= 10 Gamma_E``.
    """
    params = model.params
    kappa = TWO_PI * params.Gamma_E / 2.0
    g_max = math.sqrt(10.0 * TWO_PI * params.Gamma_E) if g_max is None else g_max
    # plain waveguide channels are replaced by the cascaded ones below
    spec = model.system(dims=CAPTURE_DIMS, waveguide=False)
    ops = emitter_operators(CAPTURE_DIMS)
    aA, aS, vA, vS = ops[1], ops[2], ops[3], ops[4]
    rk = math.sqrt(kappa)
    for a, v, key in ((aA, vA, "A"), (aS, vS, "S")):
        env = envelopes.get(key)
        if env is None or env.empty:
            spec.collapse.append([(rk * a, None)])
            continue
        g = _capture_rate(env, model.dt, g_max, conjugate)
        gc = lambda tq, g=g: np.conj(g(tq))  # noqa: E731
        spec.collapse.append([(rk * a, None), (v, gc)])
        # H in MHz: divide the angular expression by 2 pi
        spec.add_h(0.5j * rk / TWO_PI * (a.conj().T @ v), gc)
        spec.add_h(-0.5j * rk / TWO_PI * (a @ v.conj().T), g)
    nsteps = model.nsteps
    rho0 = initial_emitter_state(d_ket, CAPTURE_DIMS)
    traj = evolve(rho0, spec, nsteps * model.dt, model.dt, record_every=model.corr_stride,
                  observables=emitter_observables(CAPTURE_DIMS), store_states=False,
                  use_numba=model.use_numba)
    final = 0.5 * (traj.final + traj.final.conj().T)
    red = partial_trace(final, [3, 4], CAPTURE_DIMS)
    red = red / np.trace(red).real
    sender = partial_trace(final, [0, 1, 2], CAPTURE_DIMS)
    residual = float(1.0 - np.real(sender[0, 0]))
    captured = {"A": float(np.real(traj.expect["n_vA"][-1])), "S": float(np.real(traj.expect["n_vS"][-1]))}
    # photons leaving the sender into each channel during this run
    emitted = {k: float(kappa * _trapz(np.real(traj.expect[f"n_{k}"]), traj.t)) for k in ("A", "S")}
    # only the calibrated temporal mode can be caught; scale by its purity
    expect = {}
    for k in ("A", "S"):
        env = envelopes.get(k)
        expect[k] = 0.0 if env is None or env.empty else emitted[k] * env.purity
    tot_e = expect["A"] + expect["S"]
    tot_c = captured["A"] + captured["S"]
    eff = tot_c / tot_e if tot_e > 0 else 1.0
    if strict and tot_e > 0 and abs(tot_c - tot_e) > tol * tot_e:
        raise NumericalError("envelope-mismatch", f"captured {tot_c:.4f} vs emitted {tot_e:.4f}")
    return CaptureResult(
        state=DensityMatrix((2, 2), red, trace_tol=1e-6),
        captured=captured, emitted=emitted, efficiency=eff,
        sender_residual=residual, trajectory=traj,
    )



# ---------------------------------------------------------------- end-to-end emission


def emission_model(params: DeviceParams | None = None, drive: DriveConfig | None = None,
                   eta: float = 1.1, ideal: bool = False, **kw) -> EmissionModel:
    """Default emission model: bundled device, balanced drives at ``eta`` MHz."""
    from .device import calibrate_drives, load_params

    params = load_params() if params is None else params
    frame = kw.pop("frame", None) or hybridize(params)
    drive = calibrate_drives(frame, params, eta) if drive is None else drive
    model = EmissionModel(params, drive, frame, **kw)
    return model.ideal() if ideal else model


def simulate_emission(theta: float, protocol: str = "encoded", params: DeviceParams | None = None,
                      drive: DriveConfig | None = None, *, model: EmissionModel | None = None,
                      envelopes: dict | None = None, ideal: bool = False, strict: bool = True,
                      phase: float = 0.0):
    """Prepare qubit D, drive both transitions and catch the two output modes.

    ``encoded`` starts from ``cos(theta/2)|e> + sin(theta/2)|f>``; ``displaced``
    from ``(|g> + sqrt2|e> + |f>)/2``.  Preparation pulses are instantaneous.
    Filters default to the envelopes calibrated on the displaced protocol.
    Returns ``(trajectory, captured two-mode state)``.
    """
    if protocol not in ("encoded", "displaced"):
        raise UsageError("invalid-protocol", protocol)
    if protocol == "encoded" and not (-1e-12 <= theta <= math.pi + 1e-12):
        raise UsageError("invalid-parameter", f"theta={theta} outside [0, pi]")
    if model is None:
        model = emission_model(params, drive, ideal=ideal)
    elif ideal:
        model = model.ideal()
    if envelopes is None:
        envelopes, _, _ = calibrate_envelopes(model)
    d_ket = encoded_state(theta, phase) if protocol == "encoded" else displaced_state()
    res = cascaded_capture(model, d_ket, envelopes, strict=strict)
    return res.trajectory, res.state


def filtered_moments(model: EmissionModel, d_ket, envelopes: dict) -> dict:
    """Low-order moments of the filtered output modes from two-time correlations.

    ``a_k = int f_k(t) L_k(t) dt``; keys are ``(mA, nA, mS, nS)`` up to total order 2.
    Independent of the capture simulation, so the two routes cross-check each other.
    """
    t, G, traj = correlation_matrices(model, d_ket)
    w = np.full(t.size, t[1] - t[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    fA = envelopes["A"].samples * w
    fS = envelopes["S"].samples * w
    rk = math.sqrt(TWO_PI * model.params.Gamma_E / 2.0)
    a_A = complex(fA @ (rk * traj.expect["a_A"]))
    a_S = complex(fS @ (rk * traj.expect["a_S"]))
    out = {
        (0, 0, 0, 0): 1.0 + 0j,
        (0, 1, 0, 0): a_A,
        (1, 0, 0, 0): np.conj(a_A),
        (0, 0, 0, 1): a_S,
        (0, 0, 1, 0): np.conj(a_S),
        (1, 1, 0, 0): complex(fA.conj() @ G[("A", "A")] @ fA),
        (0, 0, 1, 1): complex(fS.conj() @ G[("S", "S")] @ fS),
        (1, 0, 0, 1): complex(fA.conj() @ G[("A", "S")] @ fS),
    }
    out[(0, 1, 1, 0)] = np.conj(out[(1, 0, 0, 1)])
    return out


# ---------------------------------------------------------------- spectroscopy


@dataclass
class SpectroscopySurface:
    which: str
    freqs: np.ndarray  # GHz, drive frequency
    amps: np.ndarray  # MHz, drive amplitude (eta or zeta)
    population: np.ndarray  # (len(amps), len(freqs)) residual population of the start level
    resonances: dict  # weak-drive resonance per hybrid mode, GHz

    def dips(self, row: int = -1, count: int = 2, prominence: float = 0.05) -> np.ndarray:
        """Drive frequencies of the ``count`` most prominent dips in one amplitude row."""
        from scipy.signal import find_peaks

        p = self.population[row]
        idx, props = find_peaks(-p, prominence=prominence)
        prom = props["prominences"]
        best = np.sort(idx[np.argsort(prom)[::-1][:count]])
        return self.freqs[best]

    def stark_slope(self, mode: str = "S") -> float:
        """Least-squares slope (GHz / MHz^2) of the dip nearest ``mode``'s resonance vs amp^2."""
        ref = self.resonances[mode]
        xs, ys = [], []
        for i, a in enumerate(self.amps):
            if a <= 0:
                continue
            d = self.dips(i, count=2)
            if d.size:
                xs.append(a * a)
                ys.append(d[np.argmin(np.abs(d - ref))])
        if len(xs) < 2:
            raise NumericalError("fit-failed", "need two driven rows with a dip")
        return float(np.polyfit(xs, ys, 1)[0])

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(HEADER + "\n")
            fh.write("freq_GHz,amp,population\n")
            for i, a in enumerate(self.amps):
                for j, f in enumerate(self.freqs):
                    fh.write(f"{f:.9f},{a:.9g},{self.population[i, j]:.12g}\n")


def spectroscopy_resonances(which: str, params: DeviceParams, frame: HybridizedFrame, amp: float = 0.0) -> dict:
    """Drive frequency (GHz) resonant with each hybrid mode at amplitude ``amp``."""
    if which == "param":
        return {"A": frame.omega_A - params.omega_D_ge, "S": frame.omega_S - params.omega_D_ge}
    if which == "2nd":
        w_ac = ac_stark(epsilon_from_zeta(amp, frame, params), frame, params)
        top = params.omega_D_ge + params.omega_D_ef + 2.0 * w_ac / 1000.0
        return {"A": top - frame.omega_A, "S": top - frame.omega_S}
    raise UsageError("invalid-sweep", which)


def spectroscopy_system(which: str, freq: float, amp: float, params: DeviceParams,
                        frame: HybridizedFrame, decoherence: bool = True) -> SystemSpec:
    """Single drive tone at ``freq`` GHz, amplitude ``amp`` MHz, coupling D to both hybrid modes.

    The parametric tone couples ``|e,0> <-> |g,1_k>`` with weights set by the flux
    overlaps; the second-order tone couples ``|f,0> <-> |g,1_k>`` with weights
    ``phi_k / phi_S`` and carries the displacement Stark shift of D.
    """
    ops = emitter_operators()
    aA, aS = ops[1], ops[2]
    res = spectroscopy_resonances(which, params, frame, amp)
    spec = SystemSpec(dims=EMITTER_DIMS, labels=("D", "A", "S"))
    if which == "param":
        oA = parametric_overlap(frame, "A")
        w = {"A": 1.0, "S": abs(parametric_overlap(frame, "S") / oA) if oA else 1.0}
        lower = d_transition(0, 1)
    else:
        w = {"A": abs(frame.phi_A / frame.phi_S) if frame.phi_S else 1.0, "S": 1.0}
        d = ops[0]
        lower = d @ d
    for k, a in (("A", aA), ("S", aS)):
        x = lower.conj().T @ a
        spec.add_h(amp * w[k] * (x + x.conj().T))
        # energy of |g,1_k> relative to the start level in the frame of the drive
        sign = 1.0 if which == "param" else -1.0
        spec.add_h(sign * 1000.0 * (res[k] - freq) * (a.conj().T @ a))
    kappa = TWO_PI * params.Gamma_E / 2.0
    spec.add_collapse(aA, kappa)
    spec.add_collapse(aS, kappa)
    if decoherence:
        spec.add_collapse(d_transition(0, 1), 1.0 / params.T1_ge)
        spec.add_collapse(d_transition(1, 2), 1.0 / params.T1_ef)
        g1, g2 = dephasing_rates(params)
        spec.add_collapse(d_projector(1), 2.0 * g1)
        spec.add_collapse(d_projector(2), 2.0 * g2)
    return spec


def _static_generator(spec: SystemSpec) -> np.ndarray:
    """Dense Liouvillian (rad/us) of a time-independent system; cheap for tiny spaces."""
    if any(c is not None for _, c in spec.h_terms) or any(c is not None for p in spec.collapse for _, c in p):
        raise UsageError("invalid-parameter", "time-dependent system")
    n = spec.n
    eye = np.eye(n)
    h = TWO_PI * sum((op for op, _ in spec.h_terms), np.zeros((n, n), complex))
    gen = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for parts in spec.collapse:
        lop = sum(b for b, _ in parts)
        ld = lop.conj().T @ lop
        gen += np.kron(lop, lop.conj()) - 0.5 * np.kron(ld, eye) - 0.5 * np.kron(eye, ld.T)
    return gen


def reachable_subspace(spec: SystemSpec, start: int) -> np.ndarray:
    """Basis indices reachable from ``|start>`` under H, every L_j and every L_j^dag L_j.

    A density matrix supported there stays there, so the generator can be restricted.
    """
    mats = [op for op, _ in spec.h_terms]
    for parts in spec.collapse:
        lop = sum(b for b, _ in parts)
        mats += [lop, lop.conj().T @ lop]
    adj = sum((np.abs(m) > 0).astype(int) for m in mats)
    seen = {start}
    todo = [start]
    while todo:
        i = todo.pop()
        for j in np.nonzero(adj[:, i])[0]:
            if j not in seen:
                seen.add(int(j))
                todo.append(int(j))
    return np.array(sorted(seen))


def restrict_system(spec: SystemSpec, keep) -> SystemSpec:
    """The same system on the span of basis states ``keep`` (must be invariant)."""
    ix = np.ix_(keep, keep)
    out = SystemSpec(dims=(len(keep),), frame=spec.frame, labels=("restricted",))
    out.h_terms = [(op[ix], c) for op, c in spec.h_terms]
    out.collapse = [[(b[ix], c) for b, c in parts] for parts in spec.collapse]
    return out


def _spectroscopy_row(args):
    which, freqs, amp, params, frame, duration, decoherence, method, dt = args
    from scipy.linalg import expm

    level = 1 if which == "param" else 2
    rho0 = initial_emitter_state(basis_ket(level))
    proj = d_projector(level)
    start = int(np.argmax(np.diag(rho0).real))
    out = np.empty(len(freqs))
    for j, f in enumerate(freqs):
        spec = spectroscopy_system(which, f, amp, params, frame, decoherence)
        if method == "expm":
            keep = reachable_subspace(spec, start)
            small = restrict_system(spec, keep)
            r0 = rho0[np.ix_(keep, keep)]
            x = expm(_static_generator(small) * duration) @ r0.reshape(-1)
            rho = np.zeros_like(rho0)
            rho[np.ix_(keep, keep)] = x.reshape(r0.shape)
        else:
            h = spec.hamiltonian(0.0)
            scale = TWO_PI * float(np.max(np.abs(np.linalg.eigvalsh(h))))
            step = min(dt, 1.0 / (20.0 * scale)) if scale > 0 else dt
            n = int(math.ceil(duration / step))
            rho = evolve(rho0, spec, duration, duration / n).final
        out[j] = float(np.real(np.trace(proj @ rho)))
    return out


def basis_ket(level: int) -> np.ndarray:
    k = np.zeros(D_DIM, dtype=complex)
    k[level] = 1.0
    return k


def spectroscopy_sweep(which: str, freq_grid, amp_grid, params: DeviceParams | None = None,
                       frame: HybridizedFrame | None = None, duration: float = 1.0,
                       decoherence: bool = True, method: str = "expm", dt: float = 1e-3,
                       jobs: int = 1) -> SpectroscopySurface:
    """Residual population after a rectangular drive pulse of ``duration`` us.

    Starts from ``|e>`` (``param``) or ``|f>`` (``2nd``).  The generator is static,
    so ``method="expm"`` propagates exactly; ``"rk4"`` integrates with a step
    adapted to the detuning.
    """
    from .device import load_params
    from .parallel import parallel_map

    if which not in ("param", "2nd"):
        raise UsageError("invalid-sweep", which)
    freqs = np.atleast_1d(np.asarray(freq_grid, dtype=float))
    amps = np.atleast_1d(np.asarray(amp_grid, dtype=float))
    if freqs.size == 0 or amps.size == 0:
        raise UsageError("invalid-grid", "empty frequency or amplitude grid")
    if np.any(amps < 0):
        raise UsageError("invalid-parameter", "amplitudes must be >= 0")
    params = load_params() if params is None else params
    frame = hybridize(params) if frame is None else frame
    rows = parallel_map(
        _spectroscopy_row,
        [(which, freqs, a, params, frame, duration, decoherence, method, dt) for a in amps],
        jobs=jobs,
    )
    return SpectroscopySurface(which=which, freqs=freqs, amps=amps, population=np.array(rows),
                               resonances=spectroscopy_resonances(which, params, frame))
