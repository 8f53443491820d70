"""RK4 propagation of vectorized density matrices under a time-dependent sparse generator.

The generator is ``G(t) = sum_k c_k(t) A_k`` with fixed CSR matrices ``A_k`` stacked
along a leading axis and coefficients tabulated on the half-step grid
``t_j = j * dt / 2``.  Two backends implement the same functions:

* numba ``@njit`` kernels (default)
* a pure numpy/scipy path, selected by ``FREQBIN_DISABLE_NUMBA=1`` or when numba
  is not importable.

Both are exercised by the test-suite and compared in ``benchmarks/``.
"""

import os

import numpy as np
import scipy.sparse as sp

_DISABLE = os.environ.get("FREQBIN_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")

try:
    if _DISABLE:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


class StackedCSR:
    """K sparse n-by-n matrices sharing one flat index/data buffer."""

    def __init__(self, mats):
        mats = [sp.csr_matrix(m, dtype=complex) for m in mats]
        n = mats[0].shape[0]
        self.n = n
        self.K = len(mats)
        indptr = np.zeros((self.K, n + 1), dtype=np.int64)
        indices, data = [], []
        base = 0
        for k, m in enumerate(mats):
            m.sum_duplicates()
            m.sort_indices()
            indptr[k] = m.indptr.astype(np.int64) + base
            indices.append(m.indices.astype(np.int64))
            data.append(m.data.astype(complex))
            base += m.nnz
        self.indptr = indptr
        self.indices = np.concatenate(indices) if indices else np.zeros(0, np.int64)
        self.data = np.concatenate(data) if data else np.zeros(0, complex)
        self.mats = mats


# ---------------------------------------------------------------- numba backend

if HAVE_NUMBA:

    @njit(cache=True)
    def _matvec_nb(indptr, indices, data, c, x, out):
        n = x.shape[0]
        for i in range(n):
            out[i] = 0.0
        for k in range(indptr.shape[0]):
            ck = c[k]
            if ck == 0.0:
                continue
            for i in range(n):
                acc = 0.0j
                for p in range(indptr[k, i], indptr[k, i + 1]):
                    acc += data[p] * x[indices[p]]
                out[i] += ck * acc

    @njit(cache=True)
    def _rk4_step_nb(indptr, indices, data, c0, c1, c2, x, dt, k1, k2, k3, k4, tmp):
        n = x.shape[0]
        _matvec_nb(indptr, indices, data, c0, x, k1)
        for i in range(n):
            tmp[i] = x[i] + 0.5 * dt * k1[i]
        _matvec_nb(indptr, indices, data, c1, tmp, k2)
        for i in range(n):
            tmp[i] = x[i] + 0.5 * dt * k2[i]
        _matvec_nb(indptr, indices, data, c1, tmp, k3)
        for i in range(n):
            tmp[i] = x[i] + dt * k3[i]
        _matvec_nb(indptr, indices, data, c2, tmp, k4)
        for i in range(n):
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])

    @njit(cache=True)
    def _evolve_nb(indptr, indices, data, coeffs, x0, dt, nsteps, stride):
        n = x0.shape[0]
        nrec = nsteps // stride + 1
        out = np.empty((nrec, n), dtype=np.complex128)
        x = x0.copy()
        k1 = np.empty(n, np.complex128)
        k2 = np.empty(n, np.complex128)
        k3 = np.empty(n, np.complex128)
        k4 = np.empty(n, np.complex128)
        tmp = np.empty(n, np.complex128)
        out[0] = x
        r = 1
        for s in range(nsteps):
            _rk4_step_nb(
                indptr, indices, data,
                coeffs[:, 2 * s], coeffs[:, 2 * s + 1], coeffs[:, 2 * s + 2],
                x, dt, k1, k2, k3, k4, tmp,
            )
            if (s + 1) % stride == 0:
                out[r] = x
                r += 1
        return out

    @njit(cache=True)
    def _correlate_nb(indptr, indices, data, coeffs, src, obs, dt, nsteps, stride):
        nrec, n = src.shape
        nobs = obs.shape[0]
        g = np.zeros((nobs, nrec, nrec), dtype=np.complex128)
        xs = np.zeros((nrec, n), dtype=np.complex128)
        k1 = np.empty(n, np.complex128)
        k2 = np.empty(n, np.complex128)
        k3 = np.empty(n, np.complex128)
        k4 = np.empty(n, np.complex128)
        tmp = np.empty(n, np.complex128)
        active = 0
        for s in range(nsteps + 1):
            if s % stride == 0:
                r = s // stride
                if r < nrec:
                    xs[r] = src[r]
                    active = r + 1
                    for j in range(active):
                        for o in range(nobs):
                            acc = 0.0j
                            for i in range(n):
                                acc += obs[o, i] * xs[j, i]
                            g[o, j, r] = acc
            if s == nsteps:
                break
            for j in range(active):
                _rk4_step_nb(
                    indptr, indices, data,
                    coeffs[:, 2 * s], coeffs[:, 2 * s + 1], coeffs[:, 2 * s + 2],
                    xs[j], dt, k1, k2, k3, k4, tmp,
                )
        return g


# ---------------------------------------------------------------- numpy backend


def _gen_np(ops, c):
    return [(ck, m) for ck, m in zip(c, ops.mats) if ck != 0]


def _apply_np(terms, x):
    # x is (n,) or (n, m)
    y = np.zeros_like(x)
    for ck, m in terms:
        y += ck * (m @ x)
    return y


def _rk4_step_np(ops, c0, c1, c2, x, dt):
    t0, t1, t2 = _gen_np(ops, c0), _gen_np(ops, c1), _gen_np(ops, c2)
    k1 = _apply_np(t0, x)
    k2 = _apply_np(t1, x + 0.5 * dt * k1)
    k3 = _apply_np(t1, x + 0.5 * dt * k2)
    k4 = _apply_np(t2, x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _evolve_np(ops, coeffs, x0, dt, nsteps, stride):
    nrec = nsteps // stride + 1
    out = np.empty((nrec, ops.n), dtype=complex)
    x = x0.astype(complex).copy()
    out[0] = x
    r = 1
    for s in range(nsteps):
        x = _rk4_step_np(ops, coeffs[:, 2 * s], coeffs[:, 2 * s + 1], coeffs[:, 2 * s + 2], x, dt)
        if (s + 1) % stride == 0:
            out[r] = x
            r += 1
    return out


def _correlate_np(ops, coeffs, src, obs, dt, nsteps, stride):
    nrec, n = src.shape
    g = np.zeros((obs.shape[0], nrec, nrec), dtype=complex)
    xs = np.zeros((n, nrec), dtype=complex)
    active = 0
    for s in range(nsteps + 1):
        if s % stride == 0 and s // stride < nrec:
            r = s // stride
            xs[:, r] = src[r]
            active = r + 1
            g[:, :active, r] = obs @ xs[:, :active]
        if s == nsteps:
            break
        xs[:, :active] = _rk4_step_np(
            ops, coeffs[:, 2 * s], coeffs[:, 2 * s + 1], coeffs[:, 2 * s + 2], xs[:, :active], dt
        )
    return g


# ---------------------------------------------------------------- dispatch


def backend_name(use_numba=None) -> str:
    use = HAVE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    return "numba" if use else "numpy"


def evolve(ops: StackedCSR, coeffs, x0, dt, nsteps, stride=1, use_numba=None):
    """Integrate ``dx/dt = G(t) x`` with fixed-step RK4; returns every ``stride``-th state."""
    coeffs = np.ascontiguousarray(coeffs, dtype=complex)
    if coeffs.shape != (ops.K, 2 * nsteps + 1):
        raise ValueError(f"coeffs shape {coeffs.shape}, expected {(ops.K, 2 * nsteps + 1)}")
    x0 = np.ascontiguousarray(x0, dtype=complex)
    if backend_name(use_numba) == "numba":
        return _evolve_nb(ops.indptr, ops.indices, ops.data, coeffs, x0, float(dt), int(nsteps), int(stride))
    return _evolve_np(ops, coeffs, x0, dt, nsteps, stride)


def correlate(ops: StackedCSR, coeffs, src, obs, dt, nsteps, stride=1, use_numba=None):
    """Quantum-regression propagation.

    ``src[r]`` is injected at record time ``r`` and propagated forward; the result
    ``g[o, r1, r2] = obs[o] . x_{r1}(t_{r2})`` is filled for ``r2 >= r1``.
    """
    coeffs = np.ascontiguousarray(coeffs, dtype=complex)
    src = np.ascontiguousarray(src, dtype=complex)
    obs = np.ascontiguousarray(np.atleast_2d(obs), dtype=complex)
    if backend_name(use_numba) == "numba":
        return _correlate_nb(
            ops.indptr, ops.indices, ops.data, coeffs, src, obs, float(dt), int(nsteps), int(stride)
        )
    return _correlate_np(ops, coeffs, src, obs, dt, nsteps, stride)
