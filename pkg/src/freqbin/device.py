"""Device parameters, coupler/emitter hybridization and drive calibration.

All user-facing frequencies are linear (omega / 2 pi): GHz for carriers, MHz for
couplings, rates and shifts.  Times are in microseconds.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FreqbinWarning, InvariantViolation, NumericalError, UsageError

# config key -> dataclass field
_KEYS = {
    "omega_D_ge_GHz": "omega_D_ge",
    "alpha_D_MHz": "alpha_D",
    "omega_C0_GHz": "omega_C0",
    "omega_E0_GHz": "omega_E0",
    "omega_E_op_GHz": "omega_E_op",
    "g_dc_MHz": "g_dc",
    "g_ec_MHz": "g_ec",
    "Gamma_E_MHz": "Gamma_E",
    "T1_ge_us": "T1_ge",
    "T1_ef_us": "T1_ef",
    "T2_ge_us": "T2_ge",
    "T2_ef_us": "T2_ef",
    "T1_c_us": "T1_c",
    "T2_c_us": "T2_c",
    "phi_dc_rad": "phi_dc",
}


@dataclass(frozen=True)
class DeviceParams:
    omega_D_ge: float = 5.05  # GHz
    alpha_D: float = -215.0  # MHz, signed (transmon: negative)
    omega_C0: float = 8.46  # GHz
    omega_E0: float = 6.17  # GHz
    omega_E_op: float = 5.745  # GHz
    g_dc: float = 37.5  # MHz
    g_ec: float = 46.0  # MHz
    Gamma_E: float = 8.0  # MHz
    T1_ge: float = 20.8  # us
    T1_ef: float = 27.0
    T2_ge: float = 14.0
    T2_ef: float = 8.8
    T1_c: float = 2.3
    T2_c: float = 1.4
    phi_dc: float = 1.0915089678384708  # rad

    def __post_init__(self):
        for name in ("omega_D_ge", "omega_C0", "omega_E0", "omega_E_op", "Gamma_E",
                     "T1_ge", "T1_ef", "T2_ge", "T2_ef", "T1_c", "T2_c"):
            if not getattr(self, name) > 0:
                raise InvariantViolation("invalid-parameter", f"{name} must be positive")
        if self.g_dc < 0 or self.g_ec < 0:
            raise InvariantViolation("invalid-parameter", "couplings must be nonnegative")
        if not self.alpha_D < 0:
            raise InvariantViolation("invalid-parameter", "alpha_D must be negative")
        for t1, t2 in ((self.T1_ge, self.T2_ge), (self.T1_ef, self.T2_ef), (self.T1_c, self.T2_c)):
            if t2 > 2 * t1 + 1e-12:
                raise InvariantViolation("invalid-parameter", f"T2={t2} exceeds 2*T1={2 * t1}")

    @property
    def chi_d(self) -> float:
        """Self-Kerr coefficient in MHz (alpha = 2 chi_d)."""
        return 0.5 * self.alpha_D

    @property
    def omega_D_ef(self) -> float:
        return self.omega_D_ge + self.alpha_D / 1000.0

    def replace(self, **kw) -> "DeviceParams":
        return dataclasses.replace(self, **kw)


def load_params(path=None) -> DeviceParams:
    """Read a flat ``key = value`` document; missing keys keep their defaults."""
    if path is None:
        text = resources.files("freqbin").joinpath("data/default_device.cfg").read_text()
    else:
        text = Path(path).read_text()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError("bad-config", f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise UsageError("bad-config", f"line {lineno}: unknown key {key!r}")
        try:
            values[_KEYS[key]] = float(val)
        except ValueError:
            raise UsageError("bad-config", f"line {lineno}: not a number: {val!r}") from None
    return DeviceParams(**values)


def apply_overrides(params: DeviceParams, assignments) -> DeviceParams:
    """Apply ``["key=value", ...]`` using the same unit-suffixed keys as the config file."""
    values = {}
    for item in assignments or ():
        if "=" not in item:
            raise UsageError("bad-override", f"expected key=value, got {item!r}")
        key, val = (s.strip() for s in item.split("=", 1))
        if key not in _KEYS:
            raise UsageError("bad-override", f"unknown key {key!r}")
        try:
            values[_KEYS[key]] = float(val)
        except ValueError:
            raise UsageError("bad-override", f"not a number: {val!r}") from None
    return params.replace(**values) if values else params


def save_params(params: DeviceParams, path) -> None:
    lines = [f"{key} = {getattr(params, field)!r}" for key, field in _KEYS.items()]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class HybridizedFrame:
    """Dressed single-excitation modes of the qubit-D / coupler / emitter block.

    ``phi_d``, ``phi_dp``, ``phi_dpp`` etc. follow the primed convention: each
    triple gives a bare operator (``d``, ``a_S``, ``a_A`` respectively) expanded in
    the dressed modes ``(d, a_A, a_S)``; triples are rows of an orthogonal matrix.
    """

    omega_A: float  # GHz
    omega_S: float
    omega_d: float  # dressed qubit-D frequency
    phi_d: float
    phi_A: float
    phi_S: float
    phi_dp: float
    phi_Ap: float
    phi_Sp: float
    phi_dpp: float
    phi_App: float
    phi_Spp: float

    @property
    def triples(self):
        return (
            (self.phi_d, self.phi_A, self.phi_S),
            (self.phi_dp, self.phi_Ap, self.phi_Sp),
            (self.phi_dpp, self.phi_App, self.phi_Spp),
        )

    @property
    def splitting_MHz(self) -> float:
        return 1000.0 * (self.omega_S - self.omega_A)


def hybridize(params: DeviceParams, g_dc=None) -> HybridizedFrame:
    """Diagonalize the single-excitation block over (d, hybrid A, hybrid S).

    The coupler is taken resonant with the emitter at ``omega_E_op``; in the bare
    hybrid basis ``a_S = (e + c)/sqrt2``, ``a_A = (e - c)/sqrt2`` the qubit-coupler
    term reads ``g_dc/sqrt2 * d^dag (a_S - a_A) + h.c.``.
    """
    g_dc = params.g_dc if g_dc is None else g_dc
    g = params.g_ec / 1000.0
    gd = g_dc / 1000.0 / math.sqrt(2.0)
    wE = params.omega_E_op
    h = np.array(
        [
            [params.omega_D_ge, -gd, gd],
            [-gd, wE - g, 0.0],
            [gd, 0.0, wE + g],
        ]
    )
    w, v = np.linalg.eigh(h)
    if np.min(np.diff(w)) < 1e-9:
        raise NumericalError("ill-conditioned-hybridization", f"eigenvalues {w}")
    # assign each dressed mode to the bare mode it overlaps most
    order = []
    for bare in range(3):
        cand = [k for k in range(3) if k not in order]
        order.append(max(cand, key=lambda k: abs(v[bare, k])))
    v = v[:, order]
    w = w[order]
    v = v * np.sign(np.diag(v))  # dressed mode k has positive overlap with bare mode k
    # rows of v: bare operator expanded in dressed (d, A, S)
    return HybridizedFrame(
        omega_A=float(w[1]),
        omega_S=float(w[2]),
        omega_d=float(w[0]),
        phi_d=float(v[0, 0]), phi_A=float(v[0, 1]), phi_S=float(v[0, 2]),
        phi_dp=float(v[2, 0]), phi_Ap=float(v[2, 1]), phi_Sp=float(v[2, 2]),
        phi_dpp=float(v[1, 0]), phi_App=float(v[1, 1]), phi_Spp=float(v[1, 2]),
    )


def coupler_frequency(phi, omega_c0):
    """Symmetric-SQUID coupler frequency ``omega_c0 * sqrt(|cos phi|)``."""
    return omega_c0 * np.sqrt(np.abs(np.cos(phi)))


def coupler_derivatives(phi, omega_c0):
    """First and second flux derivatives of :func:`coupler_frequency` (GHz/rad, GHz/rad^2)."""
    c = math.cos(phi)
    s = math.sin(phi)
    if abs(c) < 1e-6:
        raise NumericalError("singular-working-point", f"|cos(phi_dc)| = {abs(c):.2e}")
    sg = math.copysign(1.0, c)
    ac = abs(c)
    d1 = -omega_c0 * sg * s / (2.0 * math.sqrt(ac))
    d2 = -omega_c0 * (2.0 * ac * ac + s * s) / (4.0 * ac ** 1.5)
    return d1, d2


def parametric_overlap(frame: HybridizedFrame, target="A") -> float:
    """``(phi'_d - phi''_d)(phi'_k - phi''_k)`` for the flux-modulated ``a_S - a_A`` term."""
    dd = frame.phi_dp - frame.phi_dpp
    if target == "A":
        return dd * (frame.phi_Ap - frame.phi_App)
    return dd * (frame.phi_Sp - frame.phi_Spp)


def flux_amplitude_to_eta(eta_prime, frame: HybridizedFrame, params: DeviceParams) -> float:
    """Parametric coupling (MHz, signed) produced by a flux modulation of amplitude ``eta_prime``."""
    d1, _ = coupler_derivatives(params.phi_dc, params.omega_C0)
    return 1000.0 * 0.5 * d1 * eta_prime * parametric_overlap(frame, "A")


def parametric_stark(eta_prime, params: DeviceParams) -> float:
    """Drive-induced shift ``(1/4) d2omega/dphi2 * eta'^2`` in MHz."""
    _, d2 = coupler_derivatives(params.phi_dc, params.omega_C0)
    return 1000.0 * 0.25 * d2 * eta_prime ** 2


def epsilon_from_zeta(zeta, frame: HybridizedFrame, params: DeviceParams) -> float:
    """Displacement giving a two-photon coupling ``zeta`` (MHz): zeta = 2 eps chi_d phi_d^3 phi_S."""
    denom = 2.0 * params.chi_d * frame.phi_d ** 3 * frame.phi_S
    if abs(denom) < 1e-15:
        return 0.0
    return zeta / denom


def epsilon_from_lab_amplitude(zeta_prime, frame: HybridizedFrame, params: DeviceParams) -> float:
    """``-zeta' / (omega_d + 2 chi_d - omega_S)``; zeta' in MHz.  Exposed, not used by default."""
    det = 1000.0 * params.omega_D_ge + 2.0 * params.chi_d - 1000.0 * frame.omega_S
    return -zeta_prime / det


def ac_stark(epsilon, frame: HybridizedFrame, params: DeviceParams) -> float:
    """AC Stark shift of qubit D, ``4 eps^2 chi_d phi_d^4`` (MHz)."""
    return 4.0 * epsilon ** 2 * params.chi_d * frame.phi_d ** 4


@dataclass(frozen=True)
class DriveConfig:
    eta: float  # MHz
    zeta: float  # MHz
    eta_prime: float  # rad
    epsilon: float
    omega_param: float  # GHz
    omega_2nd: float  # GHz
    omega_AC: float  # MHz
    stark_param: float  # MHz
    duration: float = 0.0  # us; 0 selects the automatic 10/Gamma_eff estimate
    ramp: float = 0.010  # us
    calibration: str = "auto"

    def __post_init__(self):
        if self.eta < 0 or self.zeta < 0:
            raise InvariantViolation("invalid-parameter", "drive amplitudes must be >= 0")
        if self.duration < 0 or self.ramp < 0:
            raise InvariantViolation("invalid-parameter", "times must be >= 0")

    def replace(self, **kw) -> "DriveConfig":
        return dataclasses.replace(self, **kw)


def calibrate_drives(frame: HybridizedFrame, params: DeviceParams, eta: float,
                     epsilon=None, duration=0.0, ramp=0.010) -> DriveConfig:
    """Balanced drive set: zeta = eta/sqrt2, Stark-compensated drive frequencies.

    ``epsilon`` defaults to the displacement reproducing ``zeta`` given the dressed
    coefficients (zero when qubit D is undressed, ``phi_S = 0``).
    ``omega_param`` is reported as the positive frequency ``omega_A - omega_D - omega_AC``.
    """
    if eta < 0:
        raise UsageError("invalid-parameter", "eta must be >= 0")
    zeta = eta / math.sqrt(2.0)
    if eta > params.Gamma_E / 2.0:
        warnings.warn(
            FreqbinWarning("weak-drive-assumption-violated", f"eta={eta} MHz > Gamma_E/2"),
            stacklevel=2,
        )
    eps = epsilon_from_zeta(zeta, frame, params) if epsilon is None else float(epsilon)
    w_ac = ac_stark(eps, frame, params)
    overlap = parametric_overlap(frame, "A")
    try:
        d1, _ = coupler_derivatives(params.phi_dc, params.omega_C0)
        eta_prime = abs(eta / (1000.0 * 0.5 * d1 * overlap)) if overlap != 0 else 0.0
        stark = parametric_stark(eta_prime, params)
    except NumericalError:
        eta_prime, stark = 0.0, 0.0
    wd = params.omega_D_ge
    return DriveConfig(
        eta=eta,
        zeta=zeta,
        eta_prime=eta_prime,
        epsilon=eps,
        omega_param=frame.omega_A - wd - w_ac / 1000.0,
        omega_2nd=2 * wd + 2 * params.chi_d / 1000.0 - frame.omega_S + 2 * w_ac / 1000.0,
        omega_AC=w_ac,
        stark_param=stark,
        duration=duration,
        ramp=ramp,
    )
