"""Photon loss, the ideal receiver and loss heralding through the |f> level of qubit D."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import HEADER
from .errors import FreqbinWarning, NumericalError, UsageError
from .qlinalg import DensityMatrix, state_fidelity
from .tomography import logical_state, photonic_state

LEAK_WARN = 0.05


@dataclass(frozen=True)
class LossChannel:
    p_A: float = 0.0
    p_S: float = 0.0

    def __post_init__(self):
        for p in (self.p_A, self.p_S):
            if not 0.0 <= p <= 1.0:
                raise UsageError("invalid-parameter", f"loss probability {p} outside [0, 1]")

    @classmethod
    def equal(cls, p: float) -> "LossChannel":
        return cls(p, p)


def mode_kraus(p: float) -> list:
    """Amplitude damping on a 0/1 photon mode."""
    return [
        np.array([[1.0, 0.0], [0.0, math.sqrt(1.0 - p)]]),
        np.array([[0.0, math.sqrt(p)], [0.0, 0.0]]),
    ]


def loss_kraus(ch: LossChannel) -> list:
    """Two-mode Kraus set ``K_A (x) K_S``."""
    return [np.kron(ka, ks) for ka in mode_kraus(ch.p_A) for ks in mode_kraus(ch.p_S)]


def _mat(rho):
    return np.asarray(rho.data if isinstance(rho, DensityMatrix) else rho, dtype=complex)


def apply_loss(rho, ch: LossChannel, extra_dims: int = 1):
    """Independent photon loss on both modes.

    ``extra_dims`` > 1 treats ``rho`` as ``X (x) A (x) S`` with an untouched
    leading factor of that dimension.
    """
    m = _mat(rho)
    if m.shape != (4 * extra_dims,) * 2:
        raise UsageError("invalid-dimension", f"state shape {m.shape}")
    eye = np.eye(extra_dims)
    out = np.zeros_like(m)
    for k in loss_kraus(ch):
        kk = np.kron(eye, k)
        out += kk @ m @ kk.conj().T
    dims = (2, 2) if extra_dims == 1 else (extra_dims, 2, 2)
    return DensityMatrix(dims, out)


# |10> -> g, |01> -> e, |00> -> f; |11> has no image and is reported as leakage
RECEIVER = np.zeros((3, 4))
RECEIVER[0, 2] = 1.0
RECEIVER[1, 1] = 1.0
RECEIVER[2, 0] = 1.0
LEAK_INDEX = 3


def ideal_receive(rho, extra_dims: int = 1) -> tuple[DensityMatrix, float]:
    """Time-reversed absorption as an isometry; returns ``(state of D, leakage weight)``.

    The state is conditioned on no leakage.  A leading auxiliary factor of
    dimension ``extra_dims`` is carried along.
    """
    m = _mat(rho)
    V = np.kron(np.eye(extra_dims), RECEIVER)
    leak_proj = np.kron(np.eye(extra_dims), np.diag([0.0, 0.0, 0.0, 1.0]))
    leak = float(np.real(np.trace(leak_proj @ m)))
    if leak > LEAK_WARN:
        warnings.warn(FreqbinWarning("protocol-violation", f"|11> weight {leak:.3g}"), stacklevel=2)
    out = V @ m @ V.conj().T
    tr = float(np.real(np.trace(out)))
    if tr < 1e-12:
        raise NumericalError("all-leaked", "no weight inside the receiver space")
    dims = (3,) if extra_dims == 1 else (extra_dims, 3)
    return DensityMatrix(dims, out / tr), leak


@dataclass
class HeraldOutcome:
    p_success: float
    p_flag: float
    rho_success: DensityMatrix | None
    fidelity_success: float
    leakage: float = 0.0


def herald(rho_receiver, target=None, strict: bool = True) -> HeraldOutcome:
    """QND check of ``|f>``: flag probability and the renormalized g/e state."""
    m = _mat(rho_receiver)
    if m.shape != (3, 3):
        raise UsageError("invalid-dimension", f"receiver state shape {m.shape}")
    p_flag = float(np.real(m[2, 2]))
    p_success = 1.0 - p_flag
    if p_success < 1e-12:
        if strict:
            raise NumericalError("all-flagged", "every run heralded a loss")
        return HeraldOutcome(0.0, 1.0, None, float("nan"))
    rho_s = DensityMatrix((2,), m[:2, :2] / p_success)
    fid = float("nan") if target is None else state_fidelity(_target(target), rho_s)
    return HeraldOutcome(p_success, p_flag, rho_s, fid)


def _target(target) -> np.ndarray:
    t = np.asarray(target.data if isinstance(target, DensityMatrix) else target, dtype=complex)
    return np.outer(t, t.conj()) if t.ndim == 1 else t


def _check_theta(theta: float):
    if not -1e-12 <= theta <= math.pi + 1e-12:
        raise UsageError("invalid-parameter", f"theta={theta} outside [0, pi]")


def transfer(theta: float, ch: LossChannel, phase: float = 0.0) -> tuple[HeraldOutcome, float]:
    """Send ``|psi_theta>`` through loss into the ideal receiver.

    Returns the heralded outcome and the unheralded logical fidelity, where a
    flagged run counts as fidelity 0.
    """
    _check_theta(theta)
    rho = apply_loss(photonic_state(theta, phase), ch)
    d, leak = ideal_receive(rho)
    out = herald(d, logical_state(theta, phase), strict=False)
    out.leakage = leak
    t = logical_state(theta, phase)
    unheralded = float(np.real(t.conj() @ d.data[:2, :2] @ t))
    return out, unheralded


def loss_sweep(theta: float, p_grid, p_S=None) -> list:
    """Rows ``(p, p_flag, F_heralded, F_unheralded)``.

    Loss is equal on both modes unless ``p_S`` fixes the S-mode loss.  When every
    run is flagged the heralded fidelity is undefined and reported as NaN.
    """
    p_grid = np.atleast_1d(np.asarray(p_grid, dtype=float))
    if p_grid.size == 0:
        raise UsageError("invalid-grid", "empty loss grid")
    rows = []
    for p in p_grid:
        ch = LossChannel(float(p), float(p) if p_S is None else float(p_S))
        out, unh = transfer(theta, ch)
        rows.append((float(p), out.p_flag, out.fidelity_success, unh))
    return rows


def write_loss_sweep(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write(HEADER + "\n")
        fh.write("p,p_flag,F_heralded,F_unheralded\n")
        for p, pf, fh_, fu in rows:
            fh.write(f"{p:.12g},{pf:.17g},{fh_:.17g},{fu:.17g}\n")


@dataclass
class RemoteResult:
    joint: DensityMatrix  # X (x) D, unconditioned
    outcome: HeraldOutcome  # rho_success is the conditional X (x) {g, e} state
    witness: float  # 2 |<gg|rho|ee>| of the conditional state
    x_marginal_flagged: np.ndarray | None  # X state given a flag


def remote_entanglement(theta: float, ch: LossChannel) -> RemoteResult:
    """Entangle auxiliary qubit X with the photon, lose, receive and herald.

    Starts from ``cos(theta/2)|g>_X|10> + sin(theta/2)|e>_X|01>``; the heralded
    target is ``cos(theta/2)|gg> + sin(theta/2)|ee>`` on (X, D).
    """
    _check_theta(theta)
    psi = np.zeros(8, dtype=complex)
    psi[0 * 4 + 2] = math.cos(theta / 2)
    psi[1 * 4 + 1] = math.sin(theta / 2)
    rho = apply_loss(np.outer(psi, psi.conj()), ch, extra_dims=2)
    joint, _ = ideal_receive(rho, extra_dims=2)
    m = joint.data.reshape(2, 3, 2, 3)
    p_flag = float(np.real(np.einsum("xaxa->", m[:, 2:, :, 2:])))
    p_success = 1.0 - p_flag
    x_flag = m[:, 2, :, 2] / p_flag if p_flag > 1e-12 else None
    target = np.zeros(4, dtype=complex)
    target[0] = math.cos(theta / 2)  # |g>_X |g>_D
    target[3] = math.sin(theta / 2)  # |e>_X |e>_D
    if p_success < 1e-12:
        return RemoteResult(joint, HeraldOutcome(0.0, 1.0, None, float("nan")), 0.0, x_flag)
    cond = m[:, :2, :, :2].reshape(4, 4) / p_success
    rho_s = DensityMatrix((2, 2), cond)
    fid = state_fidelity(np.outer(target, target.conj()), rho_s)
    witness = float(2.0 * abs(cond[0, 3]))
    return RemoteResult(joint, HeraldOutcome(p_success, p_flag, rho_s, fid), witness, x_flag)
