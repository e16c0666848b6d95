"""Command-line entry point: ``nutsim {waveform,avgham,simulate,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .experiment import (
    powder_average,
    run_adnf_arnf,
    run_adrf_arrf,
    run_phase_cycle,
    sweep_omega1,
    sweep_retention,
    write_sweep,
)
from .hamiltonian import (
    average_dipolar_closed,
    average_dipolar_numeric,
    recoupling_order,
    static_average_check,
)
from .propagation import spectrum, write_csv, write_fid, write_spectrum, write_trajectory
from .waveform import export_waveform, synthesize

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
THREADS_ENV = "SPINSIM_THREADS"


def _threads(arg) -> int:
    raw = arg if arg is not None else os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"threads must be an integer, got {raw!r}", "threads") from None
    if n < 0:
        raise ConfigError("threads must be >= 0", "threads")
    return n or (os.cpu_count() or 1)


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.name + suffix)


def _write_meta(path: Path, items: dict) -> None:
    with path.open("w", newline="") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {v}\n")


def _echo(cfg: dict, path: Path) -> None:
    path.write_text(cfgmod.render(cfg))


def cmd_waveform(args) -> int:
    cfg = cfgmod.load(args.config)
    spec = cfgmod.sequence_spec(cfg)
    prog = synthesize(spec)
    out = Path(args.out or "waveform.csv")
    export_waveform(prog, out)
    _echo(cfg, _sidecar(out, ".config"))
    amp = prog.amplitude
    _write_meta(_sidecar(out, ".meta"), {
        "subcommand": "waveform", "n_samples": len(prog), "dt_s": repr(prog.dt),
        "duration_s": repr(prog.duration), "amplitude_min_rad_per_s": repr(float(amp.min())),
        "amplitude_max_rad_per_s": repr(float(amp.max())),
    })
    print(f"amplitude min {amp.min() / (2 * math.pi):.6f} Hz, max {amp.max() / (2 * math.pi):.6f} Hz, "
          f"duration {prog.duration:.9g} s")
    return 0


def cmd_avgham(args) -> int:
    cfg = cfgmod.load(args.config)
    sys_ = cfgmod.spin_system(cfg)
    if sys_.n_spins != 2 or len(sys_.couplings) != 1:
        raise ConfigError("avgham needs a two-spin system (system.kind = pair)", "system.kind")
    c = sys_.couplings[0]
    w1 = 2 * math.pi * cfg["sequence.omega1_hz"]
    wr = 2 * math.pi * cfg["sequence.omega_r_hz"]
    static = cfg["sequence.static"]
    if not w1 > 0:
        raise ConfigError("sequence.omega1_hz must be > 0", "sequence.omega1_hz")
    if static:
        numeric, closed = static_average_check(c, w1)
        label = "static"
    else:
        if not wr > 0:
            raise ConfigError("sequence.omega_r_hz must be > 0 unless sequence.static", "sequence.omega_r_hz")
        numeric = average_dipolar_numeric(c, w1, wr)
        k = recoupling_order(w1, wr)
        closed = average_dipolar_closed(c, k) if k else np.zeros_like(numeric)
        label = {1: "HORROR (k=1)", 2: "R3 (k=2)", None: "off-condition"}[k]
    dist = float(np.linalg.norm(numeric - closed))
    scale = float(np.linalg.norm(closed))
    rel = dist / scale if scale > 0 else dist
    np.set_printoptions(precision=6, suppress=True, linewidth=120)
    print(f"condition: {label}")
    print(f"numeric average (rad/s):\n{numeric}")
    print(f"closed form (rad/s):\n{closed}")
    print(f"numeric norm {np.linalg.norm(numeric):.6e} rad/s; |d| {abs(c.d):.6e} rad/s")
    print(f"frobenius distance {dist:.6e} (relative {rel:.6e})")
    if args.out:
        out = Path(args.out)
        rows, cols = np.indices(numeric.shape)
        write_csv(out, "row,col,numeric_re,numeric_im,closed_re,closed_im",
                  [rows.ravel(), cols.ravel(), numeric.real.ravel(), numeric.imag.ravel(),
                   closed.real.ravel(), closed.imag.ravel()])
        _echo(cfg, _sidecar(out, ".config"))
        _write_meta(_sidecar(out, ".meta"), {"subcommand": "avgham", "condition": label,
                                              "frobenius_distance": repr(dist), "relative_distance": repr(rel)})
    return 0


def _runner(cfg):
    if cfg["sequence.experiment"] == "adrf":
        return run_adrf_arrf
    return run_phase_cycle if cfg["sequence.phase_cycle"] else run_adnf_arnf


def cmd_simulate(args) -> int:
    cfg = cfgmod.load(args.config)
    spec = cfgmod.sequence_spec(cfg)
    sys_ = cfgmod.spin_system(cfg)
    scheme = cfgmod.powder_scheme(cfg)
    threads = _threads(args.threads)
    res = powder_average(_runner(cfg), scheme, spec, sys_, threads, cfg["output.record_every"] or None)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(res.trajectory, out / "trajectory.csv")
    files = ["trajectory.csv"]
    if spec.detect == "fid" and res.fid is not None:
        write_fid(res.fid, spec.fid_dwell, out / "fid.csv")
        freq, amp = spectrum(res.fid, spec.fid_dwell)
        write_spectrum(freq, amp, out / "spectrum.csv")
        files += ["fid.csv", "spectrum.csv"]
    _echo(cfg, out / "config.echo")
    m = res.recovered_m
    _write_meta(out / "run.meta", {
        "subcommand": "simulate", "files": ",".join(files), "n_orientations": scheme.n_orientations,
        "zeta_arnf_rad": repr(spec.arnf_zeta()), "recovered_re": repr(m.real), "recovered_im": repr(m.imag),
        "recovered_abs": repr(abs(m)), "rotation_rad": repr(res.rotation),
    })
    print(f"recovered_m = {m.real:.6f}{m.imag:+.6f}j  |m| = {abs(m):.6f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = cfgmod.load(args.config)
    if args.param is not None:
        cfg["sweep.param"] = args.param
    if args.values is not None:
        try:
            cfg["sweep.values"] = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"--values must be comma-separated numbers, got {args.values!r}", "sweep.values") from None
    param = cfg["sweep.param"]
    if param not in ("omega1", "retention"):
        raise ConfigError(f"unknown sweep parameter {param!r} (expected omega1 or retention)", "sweep.param")
    values = cfg["sweep.values"]
    if not values:
        raise ConfigError("sweep needs at least one value", "sweep.values")
    spec = cfgmod.sequence_spec(cfg)
    sys_ = cfgmod.spin_system(cfg)
    scheme = cfgmod.powder_scheme(cfg)
    threads = _threads(args.threads)
    try:
        if param == "omega1":
            res = sweep_omega1(spec, sys_, scheme, [2 * math.pi * v for v in values], threads)
            res.values = np.asarray(values, dtype=float)
        else:
            res = sweep_retention(spec, sys_, scheme, values, cfg["sweep.compensate"], threads)
    except ValueError as exc:
        raise ConfigError(f"invalid sweep value: {exc}", "sweep.values") from None
    out = Path(args.out or "sweep.csv")
    write_sweep(res, out)
    _echo(cfg, _sidecar(out, ".config"))
    _write_meta(_sidecar(out, ".meta"), {"subcommand": "sweep", "param": param, "n_values": len(values),
                                          "units": "Hz" if param == "omega1" else "s",
                                          "n_orientations": scheme.n_orientations})
    for v, m in zip(res.values, res.recovered):
        print(f"{v:.9g}  |m| = {abs(m):.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nutsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", required=True, help="key = value configuration file")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--threads", type=str, default=None,
                        help=f"worker threads (0 = all cores; default ${THREADS_ENV} or 1)")

    common(sub.add_parser("waveform", help="synthesize the RF waveform CSV"), "output CSV path")
    common(sub.add_parser("avgham", help="compare numeric and closed-form average Hamiltonians"),
           "optional CSV of matrix entries")
    common(sub.add_parser("simulate", help="run the sequence and write trajectory/FID/spectrum"), "output directory")
    sp = sub.add_parser("sweep", help="sweep omega1 or the retention time")
    common(sp, "output CSV path")
    sp.add_argument("--param", help="omega1 (values in Hz) or retention (values in s)")
    sp.add_argument("--values", help="comma-separated values")
    return p


COMMANDS = {"waveform": cmd_waveform, "avgham": cmd_avgham, "simulate": cmd_simulate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
