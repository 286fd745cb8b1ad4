"""Command-line entry point: ``pairshape <command> [options]``.

Exit status is 0 on success, 1 on a usage error and 2 when a command fails
at run time.  Relative output paths are resolved against ``--outdir``, which
defaults to ``$PAIRSHAPE_OUTDIR`` or the working directory.  A ``--config``
file holds ``key = value`` lines (keys are option names); flags given on the
command line win.
"""
from __future__ import annotations

import argparse
import difflib
import os
import re
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import applications as apps
from . import experiments as exps
from . import io
from . import slm_calibration as cal
from .detector import DetectorModel, iter_blocks
from .estimator import (MINUS, NEIGHBOR_MEAN, PLUS, ZERO, G2Accumulator, accumulate_block,
                        finalize, fix_artifacts, peak_snr, project)
from .fields import Gaussian, GridSpec, PhaseMask, make_biphoton, make_envelope, make_grating
from .propagation import propagate_pairs_analytic

OUTDIR_ENV = "PAIRSHAPE_OUTDIR"
TRUTHS = ("nf-flat", "ff-flat", "nf-grating", "ff-grating")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting, and suggests the closest valid spelling."""

    def error(self, message):
        hint = _suggest(self, message)
        raise UsageError(f"{self.prog}: error: {message}{hint}\n{self.format_usage().rstrip()}")


def _suggest(parser: argparse.ArgumentParser, message: str) -> str:
    m = re.search(r"unrecognized arguments: (\S+)", message)
    if m:
        options = [o for a in _all_actions(parser) for o in a.option_strings]
        close = difflib.get_close_matches(m.group(1).split("=")[0], options, n=1)
        return f" (did you mean {close[0]}?)" if close else ""
    m = re.search(r"invalid choice: '([^']*)' \(choose from (.*)\)", message)
    if m:
        choices = re.findall(r"'([^']*)'", m.group(2))
        close = difflib.get_close_matches(m.group(1), choices, n=1)
        return f" (did you mean {close[0]}?)" if close else ""
    return ""


def _all_actions(parser):
    for a in parser._actions:
        yield a
        if isinstance(a, argparse._SubParsersAction):
            for sub in a.choices.values():
                yield from _all_actions(sub)


# ------------------------------------------------------------------- helpers

def _floats(text: str) -> list:
    return [_float(v) for v in text.split(",") if v.strip()]


def _float(text: str) -> float:
    """Float that also accepts multiples of pi such as ``pi/2``, ``-pi`` or ``1.5*pi``."""
    t = str(text).strip().replace(" ", "")
    m = re.fullmatch(r"([-+]?)([0-9.]*(?:[eE][-+]?[0-9]+)?)\*?pi(?:/([0-9.]+))?", t)
    if not m:
        return float(t)
    k = float(m.group(2)) if m.group(2) else 1.0
    if m.group(1) == "-":
        k = -k
    return k * np.pi / (float(m.group(3)) if m.group(3) else 1.0)


def _ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def _out(args, path: str) -> Path:
    p = Path(path)
    if not p.is_absolute():
        p = Path(args.outdir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _say(**fields) -> None:
    for k, v in fields.items():
        print(f"{k}: {v}")


def _gnuplot(args, data: Path, body: str) -> None:
    if getattr(args, "gnuplot", None):
        script = _out(args, args.gnuplot)
        script.write_text("set datafile separator ','\n"
                          f"set key autotitle columnhead\n{body.format(data=data.name)}\n")


def truth_state(kind: str, n: int, period: int, alpha: float, waist: Optional[float] = None):
    """Ground-truth G2 for frame synthesis; envelopes are Gaussian pump beams."""
    spec = GridSpec(n)
    env = make_envelope(spec, Gaussian(waist if waist is not None else n / 4))
    config = "NF" if kind.startswith("nf") else "FF"
    state = make_biphoton(spec, config, env)
    mask = make_grating(spec, period, alpha) if kind.endswith("grating") else PhaseMask.flat(spec)
    return propagate_pairs_analytic(state, mask)


# ------------------------------------------------------------------ commands

def cmd_simulate(args) -> int:
    truth = truth_state(args.truth, args.n, args.period, args.alpha, args.waist)
    model = DetectorModel(args.mu, args.stray, args.noise, args.smear, args.eta, args.seed)
    out = _out(args, args.out)
    t0 = time.perf_counter()
    with io.FrameWriter(out, args.n) as w:
        for block in iter_blocks(truth, model, args.frames, args.block_size):
            w.write(block.data)
    if args.truth_out:
        io.write_g2(_out(args, args.truth_out), truth)
    _say(frames=w.m, n=args.n, output=out, seconds=f"{time.perf_counter() - t0:.2f}")
    return 0


def cmd_process(args) -> int:
    n, m = io.frames_header(args.input)
    acc = G2Accumulator(n, span_blocks=args.span_blocks)
    for frames in io.iter_frames(args.input, args.block_size):
        accumulate_block(acc, frames, workers=args.threads)
    g2 = finalize(acc)
    if args.fix != "none":
        g2 = fix_artifacts(g2, policy=args.fix)
    if args.rows != "none":
        g2 = fix_artifacts(g2, policy=args.rows, same_row=True, diagonal=False)
    if args.out:
        io.write_g2(_out(args, args.out), g2)
    summary = dict(frames=acc.frames_processed, blocks=acc.blocks_processed)
    if args.proj:
        kind, path = args.proj
        proj = project(g2, kind)
        dest = _out(args, path)
        c = proj.coords()
        io.write_csv(dest, ["di", "dj", "value"],
                     ((c[a], c[b], proj.data[a, b]) for a in range(len(c)) for b in range(len(c))))
        where, value, snr = peak_snr(proj)
        summary.update(projection=kind, peak_bin=f"{where[0]},{where[1]}", peak_value=f"{value:.6g}",
                       peak_snr=f"{snr:.3f}")
        _gnuplot(args, dest, "set view map\nsplot '{data}' using 1:2:3 with image")
    _say(**summary)
    return 0


SWEEP_HEADER = ["parameter", "order", "magnitude", "fit_amplitude", "fit_period", "fit_phase",
                "fit_offset", "residual_rms"]


def cmd_sweep(args) -> int:
    spec = GridSpec(args.n)
    if args.config_kind == "ff":
        res = exps.ff_translation_sweep(spec, args.period, args.alpha, args.betas,
                                        max_order=args.max_order)
    else:
        amps = args.amplitudes or list(np.linspace(0, 2 * np.pi, args.steps))
        res = exps.nf_amplitude_sweep(spec, args.period, amps, mode=args.mode,
                                      max_order=args.max_order)
    out = _out(args, args.out)
    io.write_csv(out, SWEEP_HEADER, ([r[k] for k in SWEEP_HEADER] for r in res.rows()))
    f1 = res.fits[1]
    _say(sweep=args.config_kind, points=len(res.parameter), first_order_period=f"{f1.period:.6g}",
         output=out)
    _gnuplot(args, out, "plot for [m=-2:2] '{data}' using 1:($2==m ? $3 : 1/0) with linespoints "
                        "title sprintf('order %d', m)")
    return 0


def cmd_ao(args) -> int:
    spec = GridSpec(args.n)
    radius = args.radius if args.radius is not None else 3 * args.n / 8
    model = apps.AberrationModel.build(spec, radius, max(args.basis, args.modes))
    aberr = model.random(args.modes, args.rms, args.seed)
    state = apps.ao_state(spec, radius)
    opt = apps.CoordinateDescentModes(args.modes, args.steps, args.passes)
    res = apps.ao_optimize(state, aberr.mask(), model, opt)
    ref = apps.nf_guidestar(state, PhaseMask.flat(spec))
    final = apps.nf_guidestar(state, aberr.mask() + res.mask)
    trace_path, mask_path = args.out
    dest = _out(args, trace_path)
    io.write_csv(dest, ["step", "feedback"], enumerate(res.trace))
    io.write_grid(_out(args, mask_path), res.mask)
    _say(modes=args.modes, rms=args.rms, evaluations=res.evaluations,
         initial_ratio=f"{apps.nf_guidestar(state, aberr.mask()) / ref:.6f}",
         final_ratio=f"{final / ref:.6f}")
    _gnuplot(args, dest, "plot '{data}' using 1:2 with linespoints")
    return 0


def cmd_tm(args) -> int:
    T = apps.TransmissionMatrix.random_unitary(args.modes, args.seed)
    measured = None
    if args.measure == "classical":
        measured = apps.measure_tm_classical(T, noise=args.noise, seed=args.seed)
    rep = apps.tm_enhancement(T, args.target, measured)
    oracle = apps.tm_enhancement(T, args.target)
    lines = [f"n_modes: {rep['n_modes']}", f"target: {rep['target']}", f"measure: {args.measure}",
             f"uncorrected: {rep['uncorrected']:.9g}", f"background: {rep['background']:.9g}",
             f"corrected: {rep['corrected']:.9g}", f"enhancement: {rep['enhancement']:.6g}",
             f"relative_to_oracle: {rep['enhancement'] / oracle['enhancement']:.6f}"]
    text = "\n".join(lines) + "\n"
    if args.out:
        _out(args, args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_calibrate(args) -> int:
    if args.action == "simulate":
        hidden = cal.PixelResponse.parse(args.hidden)
        stack = cal.simulate_speckles(hidden, args.seed, n=args.n, workers=args.threads)
        curve = cal.curve_from_stack(stack, workers=args.threads)
        out = _out(args, args.out)
        io.write_csv(out, ["grayscale", "M"], zip(curve.grayscale.tolist(), curve.M))
        _say(levels=len(curve.M), **{k: v for k, v in curve.landmarks.items()}, output=out)
        _gnuplot(args, out, "plot '{data}' using 1:2 with lines")
        return 0
    rows = io.read_csv(args.input)
    grays = np.array([int(float(r["grayscale"])) for r in rows])
    M = np.array([float(r["M"]) for r in rows])
    curve = cal.CalibrationCurve(grays, M, cal.find_landmarks(grays, M))
    resp = cal.fit_response(curve)
    inv = cal.invert_response(resp)
    phases = np.linspace(0, 2 * np.pi, args.points)
    out = _out(args, args.out)
    io.write_csv(out, ["phase_rad", "grayscale"], zip(phases, inv.lut(phases).tolist()))
    seg = resp.segments
    _say(g_pi=curve.landmarks["g_pi"], g_2pi=curve.landmarks["g_2pi"],
         left=",".join(f"{v:.6g}" for v in (seg[0].a1, seg[0].a2, seg[0].a3)),
         right=",".join(f"{v:.6g}" for v in (seg[1].a1, seg[1].a2, seg[1].a3)), output=out)
    return 0


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pairshape", description="Shape and measure spatial correlations of photon "
                                              "pairs with a phase mask (simulation).")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("--config", help="file of 'key = value' defaults, overridden by flags")
    p.add_argument("--outdir", default=os.environ.get(OUTDIR_ENV, "."),
                   help=f"base directory for relative outputs (default ${OUTDIR_ENV} or .)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="synthesise EMCCD frames from an analytic G2")
    s.add_argument("what", choices=["frames"])
    s.add_argument("--truth", choices=TRUTHS, default="nf-flat")
    s.add_argument("--n", type=int, default=32)
    s.add_argument("--mu", type=float, default=5.0, help="mean pairs per frame")
    s.add_argument("--frames", type=int, default=1000)
    s.add_argument("--block-size", type=int, default=1000)
    s.add_argument("--stray", type=float, default=0.0, help="mean stray singles per frame")
    s.add_argument("--noise", type=float, default=0.0, help="readout noise std (counts)")
    s.add_argument("--smear", type=float, default=0.0, help="row smear fraction")
    s.add_argument("--eta", type=float, default=1.0, help="quantum efficiency")
    s.add_argument("--period", type=int, default=8)
    s.add_argument("--alpha", type=_float, default=np.pi / 2)
    s.add_argument("--waist", type=float, default=None, help="pump waist in px (default n/4)")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", default="stack.bpf1")
    s.add_argument("--truth-out", default=None, help="also write the truth G2 (BPG2)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("process", help="reconstruct G2 and projections from a frame stack")
    s.add_argument("--input", required=True)
    s.add_argument("--block-size", type=int, default=1000)
    s.add_argument("--fix", choices=[NEIGHBOR_MEAN, ZERO, "none"], default=NEIGHBOR_MEAN,
                   help="policy for same-pixel entries")
    s.add_argument("--rows", choices=[NEIGHBOR_MEAN, ZERO, "none"], default="none",
                   help="policy for same-row entries (readout smear)")
    s.add_argument("--span-blocks", action="store_true", help="pair frames across block edges")
    s.add_argument("--out", default=None, help="G2 output (BPG2)")
    s.add_argument("--proj", nargs=2, metavar=("KIND", "CSV"), help="plus|minus and CSV path")
    s.add_argument("--gnuplot", default=None, help="write a gnuplot script for the projection")
    s.set_defaults(func=cmd_process)

    s = sub.add_parser("sweep", help="grating sweeps (FF translation, NF amplitude)")
    s.add_argument("config_kind", choices=["ff", "nf"])
    s.add_argument("--n", type=int, default=exps.DEFAULT_N)
    s.add_argument("--period", type=int, default=exps.DEFAULT_PERIOD)
    s.add_argument("--alpha", type=_float, default=np.pi / 2, help="FF grating amplitude")
    s.add_argument("--betas", type=_ints, default=None, help="FF offsets, e.g. 0,1,2 (default 0..P)")
    s.add_argument("--amplitudes", type=_floats, default=None, help="NF amplitudes (radians)")
    s.add_argument("--steps", type=int, default=25, help="NF amplitude steps over [0, 2 pi]")
    s.add_argument("--mode", choices=["pairs", "classical"], default="pairs")
    s.add_argument("--max-order", type=int, default=2)
    s.add_argument("--out", default="sweep.csv")
    s.add_argument("--gnuplot", default=None)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("ao", help="adaptive optics with the C+ guidestar")
    s.add_argument("--modes", type=int, default=3)
    s.add_argument("--rms", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--n", type=int, default=32)
    s.add_argument("--radius", type=float, default=None, help="pupil radius in px (default 3n/8)")
    s.add_argument("--basis", type=int, default=10)
    s.add_argument("--steps", type=int, default=9, help="grid points per mode")
    s.add_argument("--passes", type=int, default=3)
    s.add_argument("--out", nargs=2, metavar=("TRACE_CSV", "MASK_BPG1"),
                   default=["trace.csv", "mask.bpg1"])
    s.add_argument("--gnuplot", default=None)
    s.set_defaults(func=cmd_ao)

    s = sub.add_parser("tm", help="transmission-matrix correction")
    s.add_argument("--modes", type=int, default=64)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--measure", choices=["classical", "oracle"], default="classical")
    s.add_argument("--noise", type=float, default=0.0, help="relative intensity noise")
    s.add_argument("--target", type=int, default=None, help="target mode (default modes/2)")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_tm)

    s = sub.add_parser("calibrate", help="SLM phase calibration from speckle correlation")
    s.add_argument("action", choices=["simulate", "fit"])
    s.add_argument("--hidden", default="linear", help="linear|convex|concave|quad:a1,a2,a3")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--n", type=int, default=256)
    s.add_argument("--in", dest="input", default="curve.csv")
    s.add_argument("--points", type=int, default=256, help="LUT phase samples")
    s.add_argument("--out", default=None)
    s.add_argument("--gnuplot", default=None)
    s.set_defaults(func=cmd_calibrate)
    return p


def load_config(path: str) -> dict:
    cfg = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{i}: expected 'key = value'")
        k, v = (t.strip() for t in line.split("=", 1))
        cfg[k.replace("-", "_")] = v
    return cfg


def _apply_config(parser: argparse.ArgumentParser, cfg: dict) -> None:
    known = set()
    for a in _all_actions(parser):
        if a.dest in cfg and a.option_strings:
            v = cfg[a.dest]
            a.default = a.type(v) if a.type else (v.lower() in ("1", "true", "yes")
                                                  if isinstance(a, argparse._StoreTrueAction) else v)
            known.add(a.dest)
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv)
        if known.config:
            _apply_config(parser, load_config(known.config))
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            return 1
        if args.command == "calibrate" and args.out is None:
            args.out = "curve.csv" if args.action == "simulate" else "lut.csv"
        if args.command == "process" and args.proj and args.proj[0] not in (PLUS, MINUS):
            raise UsageError(f"--proj kind must be plus or minus, got {args.proj[0]!r}")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except OSError as e:
        print(f"pairshape: error: {e}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, IndexError) as e:
        print(f"pairshape {args.command}: error: {e}", file=sys.stderr)
        return 2


run = main

if __name__ == "__main__":
    sys.exit(main())
