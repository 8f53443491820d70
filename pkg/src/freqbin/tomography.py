"""Moment-based state tomography and Pauli-basis process tomography.

The two-mode space is truncated to one photon per mode, ordered ``|n_A n_S>`` with
``n_S`` fastest, so ``|10>`` has index 2 and ``|01>`` index 1.  The logical qubit
is ``|0_L> = |10>``, ``|1_L> = |01>``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .detection import MomentSet, moment_indices
from .errors import FreqbinWarning, InvariantViolation, NumericalError, UsageError
from .qlinalg import PAULI_BASIS, DensityMatrix, annihilation, project_psd_trace1_array

DIMS = (2, 2)
LOGICAL = (2, 1)  # |10>, |01>


# ---------------------------------------------------------------- sensing matrix


@dataclass
class SensingMatrix:
    indices: list
    matrix: np.ndarray  # rows . vec(rho) = <O>, row-major vec

    def apply(self, rho) -> np.ndarray:
        r = np.asarray(rho.data if isinstance(rho, DensityMatrix) else rho, dtype=complex)
        return self.matrix @ r.reshape(-1)

    def data_vector(self, moments: MomentSet) -> np.ndarray:
        try:
            return np.array([moments[ix] for ix in self.indices], dtype=complex)
        except KeyError as exc:
            raise UsageError("incomplete-moments", f"missing {exc}") from exc


def build_sensing_matrix(indices=None, dims=DIMS) -> SensingMatrix:
    """One row per moment; ``row . vec(rho) = Tr(O rho)`` so the row is ``O^T`` flattened."""
    indices = list(moment_indices() if indices is None else indices)
    if not indices:
        raise UsageError("invalid-grid", "empty moment index list")
    a = annihilation(dims[0]).data
    b = annihilation(dims[1]).data
    mp = np.linalg.matrix_power
    rows = []
    for mA, nA, mS, nS in indices:
        op = np.kron(mp(a.conj().T, mA) @ mp(a, nA), mp(b.conj().T, mS) @ mp(b, nS))
        rows.append(op.T.reshape(-1))
    return SensingMatrix(indices, np.array(rows))


def _check_stage(moments: MomentSet):
    if moments.stage not in ("denoised", "normalized", "ideal"):
        raise UsageError("invalid-stage", f"cannot reconstruct from {moments.stage} moments")


def _weights(moments: MomentSet, indices, weighting: str):
    if weighting == "equal":
        return np.ones(len(indices))
    if weighting == "inverse-variance":
        s = np.array([moments.sigma.get(ix, 0.0) for ix in indices])
        pos = s[s > 0]
        floor = pos.min() if pos.size else 1.0
        return 1.0 / np.maximum(s, floor)
    raise UsageError("invalid-weighting", weighting)


# ---------------------------------------------------------------- least squares


@dataclass
class FitInfo:
    iterations: int
    loss: float
    converged: bool
    flags: list = field(default_factory=list)


def ls_qst(moments: MomentSet, indices=None, weighting: str = "equal", max_iter: int = 100_000,
           tol: float = 1e-12, window: int = 50, return_info: bool = False):
    """Constrained least squares ``min ||B - A vec(rho)||`` over density matrices.

    Accelerated projected gradient: each step projects onto unit-trace PSD matrices
    by simplex projection of the eigenvalues.  Stops when the objective drops by
    less than ``tol`` over ``window`` iterations.  Non-convergence returns the best
    iterate with a ``not-converged`` warning.
    """
    _check_stage(moments)
    sm = build_sensing_matrix(indices or moments.indices())
    w = _weights(moments, sm.indices, weighting)
    A = sm.matrix * w[:, None]
    B = sm.data_vector(moments) * w
    n = DIMS[0] * DIMS[1]
    L = np.linalg.norm(A, 2) ** 2
    step = 1.0 / L

    def loss(x):
        r = A @ x - B
        return float(np.real(np.vdot(r, r)))

    x0, *_ = np.linalg.lstsq(A, B, rcond=None)
    x = project_psd_trace1_array(x0.reshape(n, n)).reshape(-1)
    y, tk = x.copy(), 1.0
    hist = [loss(x)]
    best, best_loss = x, hist[0]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = A.conj().T @ (A @ y - B)
        xn = project_psd_trace1_array((y - step * grad).reshape(n, n)).reshape(-1)
        tn = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
        ln = loss(xn)
        if ln > hist[-1]:
            # restart momentum on increase; counts as a step without progress
            y, tk = x.copy(), 1.0
            hist.append(hist[-1])
            if len(hist) > window and hist[-window - 1] - hist[-1] < tol:
                converged = True
                break
            continue
        y = xn + ((tk - 1) / tn) * (xn - x)
        x, tk = xn, tn
        hist.append(ln)
        if ln < best_loss:
            best, best_loss = x, ln
        if len(hist) > window and hist[-window - 1] - hist[-1] < tol:
            converged = True
            break
    info = FitInfo(it, best_loss, converged)
    if not converged:
        info.flags.append("not-converged")
        warnings.warn(FreqbinWarning("not-converged", f"ls_qst after {it} iterations"), stacklevel=2)
    rho = DensityMatrix(DIMS, best.reshape(n, n))
    return (rho, info) if return_info else rho


# ---------------------------------------------------------------- Cholesky gradient descent


@dataclass
class CholeskyAnsatz:
    rank: int = 4
    learning_rate: float = 0.01
    max_iter: int = 50_000
    tol: float = 1e-14  # absolute loss regarded as an exact fit
    seed: int = 0

    def __post_init__(self):
        if self.rank not in (1, 2, 3, 4):
            raise UsageError("invalid-rank", f"rank {self.rank} not in 1..4")


def rho_from_T(T) -> np.ndarray:
    M = T.conj().T @ T
    return M / np.trace(M).real


class _Quadratic:
    """``||A x - B||^2`` through its Gram form, so iterations cost O(16^2)."""

    def __init__(self, A, B):
        self.Q = A.conj().T @ A
        self.c = A.conj().T @ B
        self.b0 = float(np.real(np.vdot(B, B)))

    def loss(self, x) -> float:
        return float(np.real(np.vdot(x, self.Q @ x)) - 2 * np.real(np.vdot(x, self.c)) + self.b0)

    def residual_grad(self, x):
        return self.Q @ x - self.c  # A^dag (A x - B)


def gd_loss(T, A, B=None) -> float:
    q = A if isinstance(A, _Quadratic) else _Quadratic(A, B)
    return max(q.loss(rho_from_T(T).reshape(-1)), 0.0)


def gd_gradient(T, A, B=None) -> np.ndarray:
    """``dL/dRe(T) + i dL/dIm(T)`` for ``L = ||A vec(rho(T)) - B||^2``.

    With ``rho = T^dag T / tau``, ``G = mat(A^dag r)`` and ``H = (G + G^dag)/2``,
    the Wirtinger derivative is ``dL/dT* = (2/tau) T (H - Tr(H rho) I)``.
    """
    q = A if isinstance(A, _Quadratic) else _Quadratic(A, B)
    M = T.conj().T @ T
    tau = np.trace(M).real
    rho = M / tau
    n = rho.shape[0]
    G = q.residual_grad(rho.reshape(-1)).reshape(n, n)
    H = 0.5 * (G + G.conj().T)
    K = H - np.trace(H @ rho).real * np.eye(n)
    return (4.0 / tau) * (T @ K)


def _initial_T(A, B, rank, rng) -> np.ndarray:
    n = DIMS[0] * DIMS[1]
    x0, *_ = np.linalg.lstsq(A, B, rcond=None)
    rho = project_psd_trace1_array(x0.reshape(n, n))
    w, v = np.linalg.eigh(rho)
    w, v = w[::-1][:rank], v[:, ::-1][:, :rank]
    T = np.sqrt(np.clip(w, 0, None))[:, None] * v.conj().T
    if np.linalg.norm(T) < 1e-12:
        return rng.standard_normal((rank, n)) + 1j * rng.standard_normal((rank, n))
    # a small kick lets rows with zero weight leave the origin (zero rows have zero gradient)
    T = T + 1e-4 * (rng.standard_normal(T.shape) + 1j * rng.standard_normal(T.shape))
    return T


def gd_qst(moments: MomentSet, ansatz: CholeskyAnsatz | None = None, indices=None,
           weighting: str = "equal", return_info: bool = False):
    """Gradient descent on ``rho(T) = T^dag T / Tr(T^dag T)`` with ``T`` of shape (rank, 4).

    Fixed learning rate halved on any loss increase (and slowly regrown), started
    from the rank-truncated square root of the projected linear-inversion estimate.
    """
    _check_stage(moments)
    ansatz = ansatz or CholeskyAnsatz()
    sm = build_sensing_matrix(indices or moments.indices())
    w = _weights(moments, sm.indices, weighting)
    A = sm.matrix * w[:, None]
    B = sm.data_vector(moments) * w
    rng = np.random.default_rng(ansatz.seed)
    T = _initial_T(A, B, ansatz.rank, rng)
    q = _Quadratic(A, B)
    lam0 = ansatz.learning_rate
    lam = lam0
    cur = gd_loss(T, q)
    hist = [cur]
    window, rel_tol = 200, 1e-6
    converged = False
    it = 0
    for it in range(1, ansatz.max_iter + 1):
        g = gd_gradient(T, q)
        for _ in range(60):
            Tn = T - lam * g
            ln = gd_loss(Tn, q)
            if ln <= cur:
                break
            lam *= 0.5
        else:
            converged = True
            break
        T, cur = Tn, ln
        # rho(T) is scale invariant; unit norm keeps the step size meaningful
        T = T / math.sqrt(np.trace(T.conj().T @ T).real)
        lam = min(lam * 1.1, lam0)
        hist.append(cur)
        if cur < ansatz.tol or (len(hist) > window and hist[-window - 1] - cur < rel_tol * cur):
            converged = True
            break
    info = FitInfo(it, cur, converged)
    if ansatz.rank == 1 and cur > 1e-3:
        info.flags.append("rank-deficient")
        warnings.warn(FreqbinWarning("rank-deficient", f"rank-1 loss plateau {cur:.3g}"), stacklevel=2)
    rho = DensityMatrix(DIMS, rho_from_T(T))
    return (rho, info) if return_info else rho


# ---------------------------------------------------------------- logical subspace


def logical_state(theta: float, phase: float = 0.0) -> np.ndarray:
    return np.array([math.cos(theta / 2), np.exp(1j * phase) * math.sin(theta / 2)], dtype=complex)


def photonic_state(theta: float, phase: float = 0.0) -> DensityMatrix:
    """``cos(theta/2)|10> + e^{i phase} sin(theta/2)|01>`` on the two-mode space."""
    psi = np.zeros(4, dtype=complex)
    psi[LOGICAL[0]], psi[LOGICAL[1]] = logical_state(theta, phase)
    return DensityMatrix.from_ket(DIMS, psi)


def project_logical(rho, renormalize: bool = True) -> tuple[DensityMatrix | np.ndarray, float]:
    """Restrict to span{|10>, |01>}; returns ``(state, discarded weight)``.

    With ``renormalize=False`` the bare 2x2 block is returned, so the lost weight
    stays visible to a subsequent process fit.
    """
    m = np.asarray(rho.data if isinstance(rho, DensityMatrix) else rho, dtype=complex)
    if m.shape != (4, 4):
        raise UsageError("invalid-dimension", f"expected 4x4, got {m.shape}")
    ix = np.ix_(LOGICAL, LOGICAL)
    block = m[ix]
    p = float(np.trace(block).real)
    if p < 1e-6:
        raise NumericalError("empty-subspace", f"logical weight {p:.2e}")
    if not renormalize:
        return 0.5 * (block + block.conj().T), float(np.trace(m).real - p)
    return DensityMatrix((2,), block / p), float(np.trace(m).real - p)


# ---------------------------------------------------------------- process tomography


def cardinal_inputs() -> list:
    """Logical inputs ``|0>, (|0>+|1>)/sqrt2, |1>, (|0>-i|1>)/sqrt2`` as (theta, phase, ket)."""
    specs = [(0.0, 0.0), (math.pi / 2, 0.0), (math.pi, 0.0), (math.pi / 2, -math.pi / 2)]
    return [(t, ph, logical_state(t, ph)) for t, ph in specs]


def _choi_basis() -> np.ndarray:
    """Columns ``u_m`` with ``J = U chi U^dag`` for ``J = sum_ij |i><j| (x) E(|i><j|)``."""
    return np.stack([s.T.reshape(-1) for s in PAULI_BASIS], axis=1)


_U = _choi_basis()


def chi_to_choi(chi) -> np.ndarray:
    return _U @ np.asarray(chi) @ _U.conj().T


def choi_to_chi(J) -> np.ndarray:
    return _U.conj().T @ np.asarray(J) @ _U / 4.0


def apply_chi(chi, rho) -> np.ndarray:
    return np.einsum("mn,mij,jk,nlk->il", chi, PAULI_BASIS, rho, PAULI_BASIS.conj())


@dataclass
class ProcessMatrix:
    chi: np.ndarray
    tp_residual: float = 0.0
    cp_residual: float = 0.0
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.chi = np.asarray(self.chi, dtype=complex)
        if self.chi.shape != (4, 4):
            raise InvariantViolation("invalid-dimension", f"chi shape {self.chi.shape}")
        if np.max(np.abs(self.chi - self.chi.conj().T)) > 1e-8:
            raise InvariantViolation("not-hermitian", "chi")
        self.chi = 0.5 * (self.chi + self.chi.conj().T)
        self.tp_residual = tp_residual(self.chi)
        self.cp_residual = float(max(-np.linalg.eigvalsh(self.chi)[0], 0.0))
        if self.cp_residual > 1e-8:
            raise InvariantViolation("not-positive", f"chi min eigenvalue {-self.cp_residual:.2e}")

    @classmethod
    def from_unitary(cls, U) -> "ProcessMatrix":
        c = np.array([np.trace(s.conj().T @ U) / 2.0 for s in PAULI_BASIS])
        return cls(np.outer(c, c.conj()))

    @classmethod
    def identity(cls) -> "ProcessMatrix":
        return cls.from_unitary(np.eye(2))


def tp_residual(chi) -> float:
    """``|| sum_mn chi_mn s_n s_m - I ||_F`` (Paulis Hermitian)."""
    s = np.einsum("mn,nij,mjk->ik", chi, PAULI_BASIS, PAULI_BASIS)
    return float(np.linalg.norm(s - np.eye(2)))


def _project_psd(J):
    w, v = np.linalg.eigh(0.5 * (J + J.conj().T))
    return (v * np.clip(w, 0, None)) @ v.conj().T


def _project_tp(J):
    """Frobenius projection onto ``Tr_out J = I`` (output is the second factor)."""
    red = np.einsum("iaja->ij", J.reshape(2, 2, 2, 2))
    return J - np.kron(red - np.eye(2), np.eye(2) / 2.0)


def _project_tni(J):
    """Frobenius projection onto ``Tr_out J <= I`` (trace non-increasing maps)."""
    red = np.einsum("iaja->ij", J.reshape(2, 2, 2, 2))
    w, v = np.linalg.eigh(0.5 * (red + red.conj().T))
    excess = (v * np.clip(w - 1.0, 0, None)) @ v.conj().T
    return J - np.kron(excess, np.eye(2) / 2.0)


def project_cptp_choi(J, max_iter: int = 5000, tol: float = 1e-10, trace_preserving: bool = True):
    """Dykstra alternating projections onto PSD and trace-preserving Choi matrices.

    ``trace_preserving=False`` relaxes the second set to trace non-increasing maps.
    """
    affine = _project_tp if trace_preserving else _project_tni
    x = np.asarray(J, dtype=complex)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_iter):
        y = affine(x + p)
        p = x + p - y
        xn = _project_psd(y + q)
        q = y + q - xn
        done = np.linalg.norm(xn - x) < tol and np.linalg.norm(affine(xn) - xn) < tol
        x = xn
        if done:
            break
    return x


def qpt(inputs, outputs, max_iter: int = 20_000, tol: float = 1e-12,
        trace_preserving: bool = True) -> ProcessMatrix:
    """Least-squares chi from input/output qubit states under CP and TP constraints.

    Solves ``M vec(chi) = D`` with ``M[k] = vec(s_m rho_k s_n)`` by projected gradient,
    projecting through the Choi matrix.  A trace-preservation residual above 1e-4
    adds the ``non-TP`` flag.  ``trace_preserving=False`` fits a trace non-increasing
    map to unnormalized outputs; then ``Tr chi`` is the mean success probability.
    """
    ins = [np.asarray(r.data if isinstance(r, DensityMatrix) else r, dtype=complex) for r in inputs]
    outs = [np.asarray(r.data if isinstance(r, DensityMatrix) else r, dtype=complex) for r in outputs]
    ins = [np.outer(r, r.conj()) if r.ndim == 1 else r for r in ins]
    if len(ins) != len(outs) or len(ins) < 4:
        raise UsageError("invalid-process-data", "need four input/output pairs")
    rows = []
    for r in ins:
        blk = np.einsum("mij,jk,nlk->ilmn", PAULI_BASIS, r, PAULI_BASIS.conj()).reshape(4, 16)
        rows.append(blk)
    M = np.concatenate(rows)
    D = np.concatenate([o.reshape(-1) for o in outs])
    step = 1.0 / np.linalg.norm(M, 2) ** 2
    x0, *_ = np.linalg.lstsq(M, D, rcond=None)

    def proj(v):
        J = project_cptp_choi(chi_to_choi(v.reshape(4, 4)), trace_preserving=trace_preserving)
        return choi_to_chi(J).reshape(-1)

    x = proj(x0)
    prev = np.inf
    for _ in range(max_iter):
        r = M @ x - D
        cur = float(np.real(np.vdot(r, r)))
        if prev - cur < tol:
            break
        prev = cur
        x = proj(x - step * (M.conj().T @ r))
    chi = x.reshape(4, 4)
    chi = 0.5 * (chi + chi.conj().T)
    w, v = np.linalg.eigh(chi)
    chi = (v * np.clip(w, 0, None)) @ v.conj().T
    if not trace_preserving:
        return ProcessMatrix(chi)
    pm = ProcessMatrix(chi / np.trace(chi).real)
    if pm.tp_residual > 1e-4:
        pm.flags.append("non-TP")
        warnings.warn(FreqbinWarning("non-TP", f"residual {pm.tp_residual:.2e}"), stacklevel=2)
    return pm


def process_fidelity(chi, chi_ideal) -> float:
    """``Tr(chi_ideal chi)`` for trace-one chi matrices."""
    a = chi.chi if isinstance(chi, ProcessMatrix) else np.asarray(chi)
    b = chi_ideal.chi if isinstance(chi_ideal, ProcessMatrix) else np.asarray(chi_ideal)
    return float(np.real(np.trace(b @ a)))
