"""Dense linear algebra over small tensor-product Hilbert spaces."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from .errors import InvariantViolation, UsageError

HERMITIAN_TOL = 1e-12
EIG_CLIP = -1e-10


@dataclass(frozen=True, eq=False)
class Operator:
    """A square complex matrix acting on a space with subsystem dimensions ``dims``."""

    dims: tuple
    data: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        data = np.array(self.data, dtype=complex)
        dims = tuple(int(d) for d in self.dims)
        n = int(np.prod(dims))
        if data.shape != (n, n):
            raise InvariantViolation(
                "invalid-dimension", f"matrix shape {data.shape} does not match dims {dims}"
            )
        if self.hermitian and np.max(np.abs(data - data.conj().T), initial=0.0) >= HERMITIAN_TOL:
            raise InvariantViolation("not-hermitian")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dims", dims)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @property
    def dag(self) -> "Operator":
        return Operator(self.dims, self.data.conj().T, self.hermitian)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            if other.dims != self.dims:
                raise UsageError("dimension-mismatch", f"{self.dims} vs {other.dims}")
            return Operator(self.dims, self.data @ other.data)
        return self.data @ np.asarray(other)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A validated quantum state: Hermitian, unit trace, nonnegative spectrum."""

    dims: tuple
    data: np.ndarray
    trace_tol: float = field(default=1e-8)

    def __post_init__(self):
        data = np.array(self.data, dtype=complex)
        dims = tuple(int(d) for d in self.dims)
        n = int(np.prod(dims))
        if data.shape != (n, n):
            raise InvariantViolation(
                "invalid-dimension", f"matrix shape {data.shape} does not match dims {dims}"
            )
        if np.max(np.abs(data - data.conj().T)) >= HERMITIAN_TOL:
            # tiny asymmetry from solvers is symmetrized; anything larger is a bug upstream
            if np.max(np.abs(data - data.conj().T)) > 1e-8:
                raise InvariantViolation("not-hermitian")
            data = 0.5 * (data + data.conj().T)
        tr = np.trace(data).real
        if abs(tr - 1.0) > self.trace_tol:
            raise InvariantViolation("bad-trace", f"trace {tr}")
        if np.linalg.eigvalsh(data)[0] < EIG_CLIP:
            raise InvariantViolation("not-positive", f"min eigenvalue {np.linalg.eigvalsh(data)[0]}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dims", dims)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @classmethod
    def from_ket(cls, dims, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(dims, np.outer(psi, psi.conj()))

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.data @ self.data)))


def _mat(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, (Operator, DensityMatrix)) else x, dtype=complex)


def _dims(x):
    if isinstance(x, (Operator, DensityMatrix)):
        return x.dims
    return (np.asarray(x).shape[0],)


def kron(*ops) -> Operator:
    """Tensor product; subsystem dimensions are concatenated in argument order."""
    dims = tuple(d for op in ops for d in _dims(op))
    return Operator(dims, reduce(np.kron, [_mat(op) for op in ops]))


def identity(dim: int) -> Operator:
    return Operator((dim,), np.eye(dim), hermitian=True)


def annihilation(dim: int) -> Operator:
    """Truncated bosonic lowering operator, ``a[n-1, n] = sqrt(n)``."""
    if dim < 2:
        raise UsageError("invalid-dimension", f"dim={dim} < 2")
    return Operator((dim,), np.diag(np.sqrt(np.arange(1, dim)), k=1))


def basis(dim: int, n: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[n] = 1.0
    return v


def embed(op, index: int, dims: Sequence[int]) -> Operator:
    """Place a single-subsystem operator at position ``index`` of a product space."""
    factors = [np.eye(d) for d in dims]
    factors[index] = _mat(op)
    return Operator(tuple(dims), reduce(np.kron, factors))


PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
PAULI_BASIS = np.stack([PAULI[k] for k in "IXYZ"])


def partial_trace(rho, keep, dims=None) -> DensityMatrix | np.ndarray:
    """Reduce ``rho`` to the subsystems listed in ``keep`` (order preserved).

    Returns a DensityMatrix when given one, otherwise a plain array (useful for
    unnormalized operators).
    """
    is_state = isinstance(rho, DensityMatrix)
    dims = tuple(dims) if dims is not None else _dims(rho)
    m = _mat(rho)
    keep = sorted(set(int(k) for k in np.atleast_1d(keep)))
    n = len(dims)
    if not keep or any(k < 0 or k >= n for k in keep):
        raise UsageError("invalid-subsystem", f"keep={keep} for {n} subsystems")
    t = m.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = [letters[i] for i in range(n)]
    col = [letters[n + i] if i in keep else letters[i] for i in range(n)]
    out = "".join(row[k] for k in keep) + "".join(col[k] for k in keep)
    red = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    kd = tuple(dims[k] for k in keep)
    dk = int(np.prod(kd))
    red = red.reshape(dk, dk)
    if is_state:
        return DensityMatrix(kd, red, trace_tol=rho.trace_tol)
    return red


def sqrtm_psd(m: np.ndarray) -> np.ndarray:
    """Principal square root of a Hermitian PSD matrix, clipping small negative eigenvalues."""
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    w = np.where(w < EIG_CLIP, 0.0, np.clip(w, 0.0, None))
    return (v * np.sqrt(w)) @ v.conj().T


def state_fidelity(ideal, rho) -> float:
    """Jozsa fidelity ``(Tr sqrt(sqrt(ideal) rho sqrt(ideal)))**2``.

    A rank-one ``ideal`` takes the fast path ``<psi|rho|psi>``.
    """
    a, b = _mat(ideal), _mat(rho)
    if a.shape != b.shape:
        raise UsageError("dimension-mismatch", f"{a.shape} vs {b.shape}")
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    if w[-1] > 0 and np.sum(w[:-1] > 1e-12) == 0:
        psi = v[:, -1]
        f = w[-1] * np.real(psi.conj() @ b @ psi)
    else:
        sa = sqrtm_psd(a)
        inner = sa @ b @ sa
        ev = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
        f = np.sum(np.sqrt(np.clip(ev, 0.0, None))) ** 2
    return float(min(max(f, 0.0), 1.0))


def trace_distance(a, b) -> float:
    d = _mat(a) - _mat(b)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))


def project_simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection of a real vector onto ``{x >= 0, sum(x) = total}``."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def psd_trace1_project(h, dims=None) -> DensityMatrix:
    """Frobenius-nearest density matrix: keep eigenvectors, project eigenvalues onto the simplex."""
    m = _mat(h)
    dims = dims if dims is not None else _dims(h)
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    p = project_simplex(w)
    return DensityMatrix(dims, (v * p) @ v.conj().T)


def project_psd_trace1_array(m: np.ndarray) -> np.ndarray:
    """Array-only variant of :func:`psd_trace1_project` for inner solver loops."""
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (v * project_simplex(w)) @ v.conj().T
