"""Compare the numba and numpy RK4 kernels on the emission system.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Both backends run the same Liouvillian over the default emission window: one
density-matrix evolution and one batch of two-time correlation propagations.
"""

from __future__ import annotations

import argparse
import time
import warnings

import numpy as np

from freqbin import _kernels
from freqbin.dynamics import Propagator, _obs_vec, emission_model, encoded_state, initial_emitter_state
from freqbin.qlinalg import annihilation


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def run(repeat: int = 3):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = emission_model()
    spec = model.system()
    x0 = initial_emitter_state(encoded_state(np.pi / 2)).reshape(-1)
    n = spec.n
    a = np.kron(np.eye(3), np.kron(annihilation(2).data, np.eye(2)))
    obs = _obs_vec(a.conj().T)[None, :]
    stride = model.corr_stride
    rhos = Propagator(spec, model.dt, model.nsteps).evolve(x0, stride).reshape(-1, n, n)
    src = np.einsum("ij,tjk->tik", a, rhos).reshape(rhos.shape[0], -1)  # a_A rho(t) at every grid time

    results = {}
    for use_numba in (True, False):
        if use_numba and _kernels.backend_name(True) != "numba":
            continue
        prop = Propagator(spec, model.dt, model.nsteps, use_numba=use_numba)
        prop.evolve(x0, stride)  # jit warm-up
        prop.correlate(src, obs, stride)
        t_ev, ev = _best(lambda: prop.evolve(x0, stride), repeat)
        t_co, co = _best(lambda: prop.correlate(src, obs, stride), repeat)
        results[_kernels.backend_name(use_numba)] = (t_ev, t_co, ev, co)

    print(f"system dim {n}, Liouvillian {n * n}, steps {model.nsteps}, dt {model.dt} us, correlation sources {src.shape[0]}")
    print(f"{'backend':<8} {'evolve s':>10} {'correlate s':>12}")
    for name, (t_ev, t_co, *_) in results.items():
        print(f"{name:<8} {t_ev:>10.3f} {t_co:>12.3f}")
    if len(results) == 2:
        (te_n, tc_n, ev_n, co_n), (te_p, tc_p, ev_p, co_p) = results["numba"], results["numpy"]
        print(f"speedup  {te_p / te_n:>10.1f}x {tc_p / tc_n:>11.1f}x")
        print(f"max |numba - numpy|: evolve {np.max(np.abs(ev_n - ev_p)):.1e}, "
              f"correlate {np.max(np.abs(co_n - co_p)):.1e}")
    return results


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    run(args.repeat)
