"""Command-line front end: ``freqbin-lab {spectroscopy,emit,tomography,herald,moments}``.

Every output file starts with the schema header line.  Seeded runs are
byte-identical; noisy runs (finite shots) refuse to start without ``--seed``.
Exit codes: 0 ok, 2 usage, 3 numerical failure, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import math
import re
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FreqbinError, UsageError

_ANGLE = re.compile(r"^\s*(-?[0-9.]*)\s*\*?\s*pi\s*(?:/\s*([0-9.]+))?\s*$")


def parse_angle(text: str) -> float:
    """Float or multiples of pi: ``0``, ``pi``, ``pi/2``, ``3pi/4``, ``-pi/2``."""
    m = _ANGLE.match(text)
    try:
        if m:
            num = m.group(1)
            k = -1.0 if num == "-" else float(num) if num else 1.0
            return k * math.pi / (float(m.group(2)) if m.group(2) else 1.0)
        return float(text)
    except ValueError:
        raise UsageError("bad-argument", f"not an angle: {text!r}") from None


def parse_list(text: str, conv=float) -> list:
    items = [s for s in text.split(",") if s.strip()]
    if not items:
        raise UsageError("bad-argument", "empty list")
    try:
        return [conv(s) for s in items]
    except ValueError:
        raise UsageError("bad-argument", f"bad list {text!r}") from None


@dataclass
class RunConfig:
    command: str
    config: str | None = None
    overrides: list = field(default_factory=list)
    eta: float = 1.1
    ideal: bool = False
    seed: int | None = None
    jobs: int = 1
    out: Path = Path(".")

    def params(self):
        from .device import apply_overrides, load_params

        return apply_overrides(load_params(self.config), self.overrides)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="device file (key = value, units in key names)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one device field, e.g. T1_ge_us=30")
    p.add_argument("--seed", type=int, help="RNG seed; required for noisy runs")
    p.add_argument("--jobs", type=int, default=0, help="worker processes (0 = all cores)")
    p.add_argument("--out", default=".", help="output directory")


def _emission_opts(p):
    p.add_argument("--eta", type=float, default=1.1, help="parametric drive amplitude (MHz)")
    p.add_argument("--ideal", action="store_true", help="switch off qubit and coupler decoherence")
    p.add_argument("--dt", type=float, default=1e-3, help="RK4 step (us)")


def _noise_opts(p, shots_default):
    p.add_argument("--shots", type=float, default=shots_default, help="shots per moment (0 = infinite)")
    p.add_argument("--n-added", type=float, default=2.1, help="amplifier added noise photons")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="freqbin-lab", description="Frequency-bin photon emitter simulator")
    ap.add_argument("--version", action="version", version=f"freqbin-lab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectroscopy", help="drive-frequency/amplitude sweep of the hybrid modes")
    _common(p)
    p.add_argument("--which", choices=("param", "2nd"), default="param")
    p.add_argument("--freq-start", type=float, help="GHz (default: around both resonances)")
    p.add_argument("--freq-stop", type=float)
    p.add_argument("--freq-step", type=float, help="GHz")
    p.add_argument("--amps", default=None, help="comma list of drive amplitudes (MHz)")
    p.add_argument("--duration", type=float, default=1.0, help="pulse length (us)")
    p.add_argument("--method", choices=("expm", "rk4"), default="expm")

    p = sub.add_parser("emit", help="emission envelopes and photon numbers")
    _common(p)
    _emission_opts(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--theta", type=parse_angle, help="encoded preparation angle")
    g.add_argument("--displaced", action="store_true", help="(|g> + sqrt2|e> + |f>)/2 preparation (default)")

    p = sub.add_parser("tomography", help="full pipeline up to state or process reconstruction")
    _common(p)
    _emission_opts(p)
    _noise_opts(p, 5e6)
    p.add_argument("--kind", choices=("state", "process"), default="state")
    p.add_argument("--method", choices=("ls", "gd"), default="ls")
    p.add_argument("--rank", type=int, default=4, help="Cholesky rank for gd")
    p.add_argument("--thetas", default="0,pi/2,pi", help="comma list of angles (state mode)")
    p.add_argument("--phase", type=parse_angle, default=0.0)
    p.add_argument("--normalize", action="store_true", help="rescale by theta=0/pi calibration runs")

    p = sub.add_parser("herald", help="loss sweep and remote entanglement")
    _common(p)
    p.add_argument("--theta", type=parse_angle, default=math.pi / 2)
    p.add_argument("--p-grid", default="0:1:11", help="start:stop:count or comma list")
    p.add_argument("--p-S", type=float, default=None, help="fix the S-mode loss (default: equal loss)")

    p = sub.add_parser("moments", help="ideal, raw, reference and denoised moment sets")
    _common(p)
    _emission_opts(p)
    _noise_opts(p, 5e6)
    p.add_argument("--theta", type=parse_angle, default=math.pi / 2)
    p.add_argument("--phase", type=parse_angle, default=0.0)
    return ap


# ---------------------------------------------------------------- helpers


def _fmt(x) -> str:
    return f"{x:.12g}"


def _shots(args) -> int | None:
    s = int(args.shots)
    if s < 0:
        raise UsageError("bad-argument", "shots must be >= 0")
    return None if s == 0 else s


def _noise(args):
    from .detection import NoiseModel

    shots = _shots(args)
    if shots is None:
        return None
    if args.seed is None:
        raise UsageError("seed-required", "noisy runs (finite --shots) need --seed")
    return NoiseModel(n_added=args.n_added, shots=shots, seed=args.seed)


def _setup(args, params):
    from .pipeline import prepare

    return prepare(params, eta=args.eta, ideal=args.ideal, dt=args.dt)


def _flag_lines(flags) -> list:
    return [f"flag {f}" for f in sorted(set(flags))]


# ---------------------------------------------------------------- commands


def cmd_spectroscopy(args, cfg: RunConfig) -> list:
    from .device import hybridize
    from .dynamics import spectroscopy_resonances, spectroscopy_sweep
    from .io import write_text

    params = cfg.params()
    frame = hybridize(params)
    res = spectroscopy_resonances(args.which, params, frame)
    lo, hi = min(res.values()), max(res.values())
    step = args.freq_step or (0.001 if args.which == "param" else 0.0005)
    start = lo - 0.05 if args.freq_start is None else args.freq_start
    stop = hi + 0.05 if args.freq_stop is None else args.freq_stop
    if not step > 0 or stop <= start:
        raise UsageError("invalid-grid", "need freq-stop > freq-start and freq-step > 0")
    freqs = start + step * np.arange(int(round((stop - start) / step)) + 1)
    default_amps = "0,0.5,1.1,2.0" if args.which == "param" else "0,0.4,0.78,1.2"
    amps = parse_list(args.amps or default_amps)
    surf = spectroscopy_sweep(args.which, freqs, amps, params, frame, duration=args.duration,
                              method=args.method, jobs=cfg.jobs)
    csv = cfg.out / f"spectroscopy_{args.which}.csv"
    surf.to_csv(csv)
    lines = [f"which {args.which}", f"freq_step_GHz {_fmt(step)}",
             f"resonance_A_GHz {_fmt(res['A'])}", f"resonance_S_GHz {_fmt(res['S'])}",
             f"mode_splitting_MHz {_fmt(1000 * (frame.omega_S - frame.omega_A))}"]
    for i, a in enumerate(surf.amps):
        row = surf.population[i]
        d = surf.dips(i) if np.ptp(row) > 0 else np.array([])
        dips = " ".join(_fmt(x) for x in d) if d.size else "none"
        lines.append(f"amp {_fmt(a)} min_population {_fmt(row.min())} dips_GHz {dips}")
        if d.size == 2:
            lines.append(f"amp {_fmt(a)} dip_separation_MHz {_fmt(1000 * abs(d[1] - d[0]))}")
    if args.which == "2nd" and np.count_nonzero(surf.amps > 0) >= 2:
        lines.append(f"stark_slope_GHz_per_MHz2 {_fmt(surf.stark_slope('S'))}")
    summary = cfg.out / f"spectroscopy_{args.which}_summary.txt"
    write_text(summary, lines)
    return [csv, summary]


def cmd_emit(args, cfg: RunConfig) -> list:
    from .dynamics import calibrate_envelopes, emission_model, encoded_state
    from .io import write_text

    model = emission_model(cfg.params(), eta=args.eta, ideal=args.ideal, dt=args.dt)
    if args.theta is None:
        envs, _, traj = calibrate_envelopes(model)
        label = "displaced"
    else:
        if not -1e-12 <= args.theta <= math.pi + 1e-12:
            raise UsageError("invalid-parameter", f"theta={args.theta} outside [0, pi]")
        envs, _, traj = calibrate_envelopes(model, encoded_state(args.theta))
        label = f"theta={_fmt(args.theta)}"
    files = []
    lines = [f"protocol {label}", f"eta_MHz {_fmt(args.eta)}", f"duration_us {_fmt(model.nsteps * model.dt)}"]
    for c in ("A", "S"):
        env = envs[c]
        path = cfg.out / f"envelope_{c}.csv"
        env.to_csv(path)
        files.append(path)
        amp = np.abs(env.samples)
        peak = float(env.t[np.argmax(amp)] / env.t[-1]) if amp.max() > 0 else float("nan")
        lines.append(f"mode {c} n {_fmt(env.n)} Gamma_eff_MHz {_fmt(env.Gamma_eff)} "
                     f"purity {_fmt(env.purity)} peak_fraction {_fmt(peak)}")
    tpath = cfg.out / "trajectory.csv"
    traj.to_csv(tpath)
    summary = cfg.out / "emit_summary.txt"
    write_text(summary, lines)
    return files + [tpath, summary]


def _write_moments(out: Path, tag: str, run) -> list:
    files = []
    for name in ("ideal", "raw", "reference", "denoised"):
        ms = getattr(run, name)
        if ms is None:
            continue
        path = out / f"moments_{tag}_{name}.csv"
        ms.to_csv(path)
        files.append(path)
    return files


def _rho_payload(rho, theta, phase, fid) -> dict:
    from .io import matrix_to_pairs

    return {"dims": list(rho.dims), "rho": matrix_to_pairs(rho.data), "theta": theta, "phase": phase,
            "fidelity": fid}


def cmd_tomography(args, cfg: RunConfig) -> list:
    from .io import matrix_to_pairs, write_json, write_text
    from .pipeline import measure_process, measure_states

    params = cfg.params()
    noise = _noise(args)
    setup = _setup(args, params)
    common = dict(noise=noise, seed=cfg.seed, method=args.method, rank=args.rank,
                  normalize=args.normalize, jobs=cfg.jobs)
    lines = [f"kind {args.kind}", f"method {args.method}" + (f" rank {args.rank}" if args.method == "gd" else ""),
             f"shots {noise.shots if noise else 'infinite'}", f"n_added {_fmt(noise.n_added) if noise else 'none'}",
             f"normalized {'yes' if args.normalize else 'no'}"]
    files = []
    if args.kind == "state":
        points = [(t, args.phase) for t in parse_list(args.thetas, parse_angle)]
        runs = measure_states(setup, points, **common)
        proc = None
    else:
        proc = measure_process(setup, **common)
        runs = proc.states
    flags = []
    for i, r in enumerate(runs):
        files += _write_moments(cfg.out, str(i), r)
        path = cfg.out / f"rho_{i}.json"
        write_json(path, _rho_payload(r.reconstructed, r.theta, r.phase, r.fidelity))
        files.append(path)
        flags += r.flags
        lines.append(f"state {i} theta {_fmt(r.theta)} phase {_fmt(r.phase)} "
                     f"F_captured {_fmt(r.fidelity_captured)} F_reconstructed {_fmt(r.fidelity)}")
    if proc is not None:
        path = cfg.out / "chi.json"
        write_json(path, {"basis": ["I", "X", "Y", "Z"],
                          "chi": matrix_to_pairs(proc.chi.chi),
                          "chi_loss_counted": matrix_to_pairs(proc.chi_lossy.chi),
                          "F_proc": proc.fidelity, "F_proc_loss_counted": proc.fidelity_lossy})
        files.append(path)
        lines += [f"F_proc {_fmt(proc.fidelity)}", f"F_proc_loss_counted {_fmt(proc.fidelity_lossy)}",
                  f"trace_chi_loss_counted {_fmt(np.trace(proc.chi_lossy.chi).real)}"]
        flags += proc.chi.flags + proc.chi_lossy.flags
    lines += _flag_lines(flags)
    report = cfg.out / "tomography_report.txt"
    write_text(report, lines)
    return files + [report]


def _p_grid(text: str) -> np.ndarray:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError("bad-argument", "p-grid start:stop:count")
        try:
            return np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))
        except ValueError:
            raise UsageError("bad-argument", f"bad p-grid {text!r}") from None
    return np.array(parse_list(text))


def cmd_herald(args, cfg: RunConfig) -> list:
    from .heralding import LossChannel, loss_sweep, remote_entanglement, write_loss_sweep
    from .io import write_text

    grid = _p_grid(args.p_grid)
    rows = loss_sweep(args.theta, grid, args.p_S)
    csv = cfg.out / "loss_sweep.csv"
    write_loss_sweep(csv, rows)
    lines = [f"theta {_fmt(args.theta)}"]
    for p in (grid[0], grid[-1]):
        ch = LossChannel(float(p), float(p) if args.p_S is None else args.p_S)
        r = remote_entanglement(args.theta, ch)
        lines.append(f"remote p_A {_fmt(ch.p_A)} p_S {_fmt(ch.p_S)} p_flag {_fmt(r.outcome.p_flag)} "
                     f"F_heralded {_fmt(r.outcome.fidelity_success)} witness {_fmt(r.witness)}")
        if r.x_marginal_flagged is not None:
            x = r.x_marginal_flagged
            lines.append("  X_given_flag " + " ".join(f"{_fmt(z.real)}{z.imag:+.12g}j" for z in x.ravel()))
    summary = cfg.out / "remote_summary.txt"
    write_text(summary, lines)
    return [csv, summary]


def cmd_moments(args, cfg: RunConfig) -> list:
    from .pipeline import _capture_and_measure

    noise = _noise(args)
    setup = _setup(args, cfg.params())
    seq = np.random.SeedSequence(0 if cfg.seed is None else cfg.seed).spawn(1)[0]
    run = _capture_and_measure((setup, args.theta, args.phase, noise, seq))
    return _write_moments(cfg.out, "0", run)


COMMANDS = {
    "spectroscopy": cmd_spectroscopy,
    "emit": cmd_emit,
    "tomography": cmd_tomography,
    "herald": cmd_herald,
    "moments": cmd_moments,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on usage errors
    if args.jobs < 0:
        parser.error("--jobs must be >= 0")
    out = Path(args.out)
    cfg = RunConfig(command=args.command, config=args.config, overrides=args.overrides,
                    seed=args.seed, jobs=args.jobs, out=out)
    try:
        cfg.params()  # validate the device file and overrides for every command
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            files = COMMANDS[args.command](args, cfg)
        for w in caught:
            flag = getattr(w.message, "flag", None)
            if flag:
                print(f"warning: {w.message}", file=sys.stderr)
    except FreqbinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: bad-argument: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical-failure: {exc}", file=sys.stderr)
        return 3
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
