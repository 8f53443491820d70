"""Mode matching, joint moments, amplifier-noise synthesis, denoising and normalization.

The detected signal of mode k is ``S_k = a_k + h_k^dag`` with ``h_k`` an independent
thermal noise mode of mean occupation ``n_added``.  Because ``a`` and ``h`` commute,

    (S^dag)^m S^n = sum_{i<=m, j<=n} C(m,i) C(n,j) (a^dag)^i a^j  h^(m-i) (h^dag)^(n-j)

so raw moments are a binomial double sum (per mode) of signal moments times
anti-normally ordered noise moments ``<h^p (h^dag)^q> = delta_pq p! (n+1)^p``.
The reference run (signal in vacuum) measures exactly those noise moments, and
the same sum inverted from low to high order recovers the signal moments.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import HEADER
from .errors import FreqbinWarning, InvariantViolation, NumericalError, UsageError
from .qlinalg import DensityMatrix, annihilation

MAX_POWER = 2
MAX_ORDER = 4
STAGES = ("ideal", "raw", "reference", "denoised", "normalized")


def moment_indices(max_power: int = MAX_POWER, max_order: int = MAX_ORDER) -> list:
    """All ``(mA, nA, mS, nS)`` with entries <= max_power and total order <= max_order."""
    rng = range(max_power + 1)
    return [ix for ix in itertools.product(rng, rng, rng, rng) if sum(ix) <= max_order]


def conj_index(ix):
    mA, nA, mS, nS = ix
    return (nA, mA, nS, mS)


@dataclass
class MomentSet:
    """Joint moments ``<(a_A^dag)^mA a_A^nA (a_S^dag)^mS a_S^nS>``."""

    values: dict
    stage: str = "ideal"
    shots: int | None = None
    sigma: dict = field(default_factory=dict)  # standard error per index (finite shots)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise UsageError("invalid-stage", self.stage)
        self.values = {tuple(int(i) for i in k): complex(v) for k, v in self.values.items()}

    def __getitem__(self, ix) -> complex:
        return self.values[tuple(ix)]

    def __contains__(self, ix) -> bool:
        return tuple(ix) in self.values

    def indices(self) -> list:
        return sorted(self.values)

    def with_stage(self, stage, values=None) -> "MomentSet":
        return MomentSet(dict(self.values if values is None else values), stage, self.shots, dict(self.sigma))

    def symmetry_residual(self) -> float:
        """Largest ``|M(ix) - conj(M(conj ix))|`` over the grid."""
        res = 0.0
        for ix, v in self.values.items():
            cx = conj_index(ix)
            if cx in self.values:
                res = max(res, abs(v - np.conj(self.values[cx])))
        return res

    def check(self, tol: float = 1e-9):
        if abs(self.values.get((0, 0, 0, 0), 1.0) - 1.0) > tol:
            raise InvariantViolation("bad-normalization", f"M(0,0,0,0) = {self.values[(0, 0, 0, 0)]}")
        r = self.symmetry_residual()
        if r > tol:
            raise InvariantViolation("conjugation-asymmetry", f"residual {r:.2e}")
        return self

    def to_csv(self, path):
        """Deterministic export; ``%.17g`` round-trips every double exactly."""
        with open(path, "w", newline="") as fh:
            fh.write(HEADER + "\n")
            if self.shots is not None:
                fh.write(f"# shots={self.shots}\n")
            fh.write("mA,nA,mS,nS,re,im,stage\n")
            for ix in self.indices():
                v = self.values[ix]
                fh.write(f"{ix[0]},{ix[1]},{ix[2]},{ix[3]},{v.real:.17g},{v.imag:.17g},{self.stage}\n")

    @classmethod
    def from_csv(cls, path) -> "MomentSet":
        values, stage, shots = {}, None, None
        with open(path, newline="") as fh:
            lines = []
            for line in fh:
                if line.startswith("# shots="):
                    shots = int(line.split("=", 1)[1])
                elif not line.startswith("#"):
                    lines.append(line)
        reader = csv.DictReader(lines)
        try:
            for row in reader:
                ix = (int(row["mA"]), int(row["nA"]), int(row["mS"]), int(row["nS"]))
                values[ix] = complex(float(row["re"]), float(row["im"]))
                if stage is not None and row["stage"] != stage:
                    raise UsageError("invalid-moment-file", "mixed stages")
                stage = row["stage"]
        except (KeyError, ValueError, TypeError) as exc:
            raise UsageError("invalid-moment-file", str(exc)) from exc
        if not values:
            raise UsageError("invalid-moment-file", "no rows")
        return cls(values, stage, shots)


@dataclass(frozen=True)
class NoiseModel:
    """Phase-insensitive amplifier: thermal added noise and finite shot count."""

    n_added: float = 2.1
    shots: int | None = None  # None means infinitely many
    seed: int | None = None
    quantum_efficiency: float | None = None

    def __post_init__(self):
        if self.n_added < 0:
            raise UsageError("invalid-parameter", "n_added must be >= 0")
        if self.shots is not None and self.shots < 1:
            raise UsageError("invalid-parameter", "shots must be >= 1")
        eta = 0.5 / (0.5 + self.n_added)
        if self.quantum_efficiency is None:
            object.__setattr__(self, "quantum_efficiency", eta)
        elif abs(self.quantum_efficiency - eta) > 1e-6:
            raise InvariantViolation("inconsistent-noise-model", f"eta {self.quantum_efficiency} vs {eta}")

    def noise_moment(self, p: int, q: int) -> float:
        """Anti-normally ordered thermal moment ``<h^p (h^dag)^q>``."""
        return math.factorial(p) * (self.n_added + 1.0) ** p if p == q else 0.0


# ---------------------------------------------------------------- filtering and moments


def temporal_filter(record, envelope, reference: float | None = None) -> complex:
    """Mode amplitude ``sum_t f(t) record(t) dt``.

    ``reference`` (GHz) is the frame of ``record``; the envelope then carries its
    carrier offset ``exp(2 pi i (carrier - reference) t)``.  ``None`` treats the
    record as already in the envelope's own frame.
    """
    record = np.asarray(record, dtype=complex)
    f = np.asarray(envelope.samples, dtype=complex)
    if record.shape != f.shape:
        raise UsageError("grid-mismatch", f"record {record.shape} vs envelope {f.shape}")
    if reference is not None:
        f = f * np.exp(2j * math.pi * 1000.0 * (envelope.carrier - reference) * envelope.t)
    return complex(np.sum(f * record) * envelope.dt)


def _monomial(a, m, n):
    ad = a.conj().T
    return np.linalg.matrix_power(ad, m) @ np.linalg.matrix_power(a, n)


def moments_from_state(rho, indices=None) -> MomentSet:
    """Ideal moments of a two-mode state (any Fock truncation per mode)."""
    m = np.asarray(rho.data if isinstance(rho, DensityMatrix) else rho, dtype=complex)
    dims = rho.dims if isinstance(rho, DensityMatrix) else (int(round(math.sqrt(m.shape[0]))),) * 2
    if len(dims) != 2:
        raise UsageError("invalid-dimension", f"two-mode state expected, dims {dims}")
    a = annihilation(dims[0]).data
    b = annihilation(dims[1]).data
    vals = {}
    for ix in indices or moment_indices():
        op = np.kron(_monomial(a, ix[0], ix[1]), _monomial(b, ix[2], ix[3]))
        vals[ix] = np.trace(m @ op)
    return MomentSet(vals, "ideal")


# ---------------------------------------------------------------- noise synthesis


def _binomial_terms(ix):
    """``(coef, signal index, noise index)`` over the binomial double sum of one monomial."""
    mA, nA, mS, nS = ix
    for i, j, k, l in itertools.product(range(mA + 1), range(nA + 1), range(mS + 1), range(nS + 1)):
        c = math.comb(mA, i) * math.comb(nA, j) * math.comb(mS, k) * math.comb(nS, l)
        yield c, (i, j, k, l), (mA - i, nA - j, mS - k, nS - l)


def _combine(signal: dict, noise: dict, indices) -> dict:
    out = {}
    for ix in indices:
        out[ix] = sum(c * signal[s] * noise[n] for c, s, n in _binomial_terms(ix))
    return out


def _shot_sigma(raw: dict, ix) -> float:
    """Single-shot spread of a monomial estimator under a complex-Gaussian bound.

    ``E|S|^(2p) = p! <S^dag S>^p`` for Gaussian ``S``; the signal is a small
    perturbation of the dominant thermal noise here.
    """
    pA, pS = ix[0] + ix[1], ix[2] + ix[3]
    sA, sS = raw[(1, 1, 0, 0)].real, raw[(0, 0, 1, 1)].real
    second = math.factorial(pA) * sA ** pA * math.factorial(pS) * sS ** pS
    return math.sqrt(max(second - abs(raw[ix]) ** 2, 0.0))


def _add_shot_noise(values: dict, shots: int, rng: np.random.Generator) -> tuple[dict, dict]:
    """Conjugate-symmetric Gaussian estimation error; canonical index of each pair drawn once."""
    out, sig = dict(values), {}
    for ix in sorted(values):
        cx = conj_index(ix)
        if ix == (0, 0, 0, 0) or cx < ix:
            continue
        s = _shot_sigma(values, ix) / math.sqrt(shots)
        if cx == ix:
            out[ix] = values[ix] + s * rng.standard_normal()
        else:
            z = s * (rng.standard_normal() + 1j * rng.standard_normal()) / math.sqrt(2.0)
            out[ix] = values[ix] + z
            out[cx] = values[cx] + np.conj(z)
            sig[cx] = s
        sig[ix] = s
    return out, sig


def _required(indices):
    """Close an index list under the lower-order terms the binomial sum needs."""
    need = set(indices) | {(1, 1, 0, 0), (0, 0, 1, 1), (0, 0, 0, 0)}
    for ix in list(need):
        for _, s, n in _binomial_terms(ix):
            need.add(s)
            need.add(n)
    return sorted(need)


def synthesize_raw_moments(ideal: MomentSet, noise: NoiseModel, rng: np.random.Generator | None = None):
    """Raw signal and reference moments for thermal amplifier noise.

    Returns ``(raw, reference)``.  With ``noise.shots`` set, each moment of both
    sets gets an independent Gaussian estimation error drawn from one stream,
    raw then reference, mimicking interleaved acquisition.
    """
    if ideal.stage != "ideal":
        raise UsageError("invalid-stage", f"expected ideal moments, got {ideal.stage}")
    indices = ideal.indices()
    for ix in _required(indices):
        if ix not in ideal:
            raise UsageError("incomplete-moments", f"missing {ix}")
    noise_vals = {}
    for ix in indices:
        noise_vals[ix] = noise.noise_moment(ix[0], ix[1]) * noise.noise_moment(ix[2], ix[3])
    vacuum = {ix: (1.0 if ix == (0, 0, 0, 0) else 0.0) for ix in indices}
    raw = _combine(ideal.values, noise_vals, indices)
    ref = _combine(vacuum, noise_vals, indices)
    sr, sf = {}, {}
    if noise.shots is not None:
        rng = np.random.default_rng(noise.seed) if rng is None else rng
        raw, sr = _add_shot_noise(raw, noise.shots, rng)
        ref, sf = _add_shot_noise(ref, noise.shots, rng)
    return (MomentSet(raw, "raw", noise.shots, sr), MomentSet(ref, "reference", noise.shots, sf))


def denoise_moments(raw: MomentSet, reference: MomentSet) -> MomentSet:
    """Invert the binomial sum using the reference run's noise moments, lowest order first."""
    if set(raw.indices()) != set(reference.indices()):
        raise UsageError("grid-mismatch", "raw and reference index sets differ")
    ref = reference.values
    for k, ix in (("A", (1, 1, 0, 0)), ("S", (0, 0, 1, 1))):
        if ix in ref and ref[ix].real < 1.0:
            raise NumericalError("bad-reference", f"negative noise power in mode {k}: <hh^dag> = {ref[ix].real:.4g}")
    if abs(ref.get((0, 0, 0, 0), 1.0) - 1.0) > 1e-9:
        raise NumericalError("bad-reference", "reference not normalized")
    out = {}
    for ix in sorted(raw.indices(), key=lambda x: (sum(x), x)):
        acc = raw[ix]
        for c, s, n in _binomial_terms(ix):
            if s == ix:
                continue
            acc -= c * out[s] * ref[n]
        out[ix] = acc
    return MomentSet(out, "denoised", raw.shots)


# ---------------------------------------------------------------- normalization


def target_occupation(gamma_eff: float, T1: float) -> float:
    """``Gamma_eff / (Gamma_eff + Gamma_D)`` with ``Gamma_D = 1 / (2 pi T1)`` in MHz."""
    gamma_d = 1.0 / (2.0 * math.pi * T1) if T1 > 0 else math.inf
    if math.isinf(gamma_d):
        return 0.0
    return gamma_eff / (gamma_eff + gamma_d)


def normalization_scales(Gamma_eff_A, Gamma_eff_S, params, calib_A: MomentSet, calib_S: MomentSet):
    """Amplitude scales ``(s_A, s_S)`` putting the calibration occupations on target.

    ``calib_A`` is the theta=0 run (photon in A), ``calib_S`` the theta=pi run.
    """
    out = []
    for gamma, T1, cal, ix in ((Gamma_eff_A, params.T1_ge, calib_A, (1, 1, 0, 0)),
                               (Gamma_eff_S, params.T1_ef, calib_S, (0, 0, 1, 1))):
        n = cal[ix].real
        if not abs(n) > 1e-12:
            raise NumericalError("cannot-normalize", f"calibration moment {ix} is zero")
        target = target_occupation(gamma, T1)
        if target <= 0:
            warnings.warn(FreqbinWarning("degenerate-normalization", "target occupation is zero"), stacklevel=2)
        out.append(math.sqrt(max(target, 0.0) / n) if n > 0 else 0.0)
    return tuple(out)


def normalize_moments(denoised: MomentSet, Gamma_eff_A: float, Gamma_eff_S: float, params,
                      calib_A: MomentSet | None = None, calib_S: MomentSet | None = None) -> MomentSet:
    """Rescale mode amplitudes so calibration runs hit ``Gamma_eff / (Gamma_eff + Gamma_D)``.

    Each moment is multiplied by ``s_A^(mA+nA) s_S^(mS+nS)``.  Without explicit
    calibration sets the input itself is used for both modes.
    """
    s_A, s_S = normalization_scales(Gamma_eff_A, Gamma_eff_S, params,
                                    calib_A or denoised, calib_S or denoised)
    return apply_scales(denoised, s_A, s_S)


def apply_scales(moments: MomentSet, s_A: float, s_S: float) -> MomentSet:
    vals = {ix: v * s_A ** (ix[0] + ix[1]) * s_S ** (ix[2] + ix[3]) for ix, v in moments.values.items()}
    return moments.with_stage("normalized", vals)


def moment_matrix(moments: MomentSet) -> np.ndarray:
    """Gram matrix ``<X_i^dag X_j>`` over ``{1, a_A, a_S, a_A a_S}``; PSD for physical states.

    Only products whose normally ordered form lies on the grid are used.
    """
    # X = a_A^p a_S^q, <X_i^dag X_j> = <(a_A^dag)^pi a_A^pj (a_S^dag)^qi a_S^qj>
    basis = [(0, 0), (1, 0), (0, 1), (1, 1)]
    g = np.zeros((4, 4), dtype=complex)
    for i, (pi, qi) in enumerate(basis):
        for j, (pj, qj) in enumerate(basis):
            g[i, j] = moments[(pi, pj, qi, qj)]
    return g
