"""Command-line interface: ``sense``, ``recover`` and ``bench``.

Exit status is 0 on success, 1 on a usage error (bad flag, out-of-range
value, malformed bench config) and 2 on a runtime failure (missing or
corrupt file, solver failure, failed bench cells).

Bench config format
-------------------
A flat text file of ``key = value`` lines; blank lines and lines starting
with ``#`` are ignored. Lists are comma separated. Relative image paths and
the output directory are resolved against the config file's directory.

    images   = data/camera64.pgm, data/coins64.pgm   # required
    ratios   = 0.25, 0.3                             # required, each in (0, 1]
    seeds    = 1, 2, 3                               # default 1
    baseline = true                                  # also run alpha = 0
    output   = bench_out                             # default "bench"
    workers  = 1                                     # cells run in parallel if > 1

Any solver flag can be overridden by its long name with dashes or
underscores (``max_outer = 8``, ``w-update-every = 2``, ``h = 0.05``).
The results go to ``<output>/bench.csv`` and each reconstruction is saved
as ``<output>/images/<image>_r<ratio>_s<seed>_<algorithm>.png``.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .image_io import ImageError, load_image, save_image
from .regularizers import RegularizerError
from .sensing import (SensingError, read_measurements, sense,
                      write_measurements)
from .solver import SolverError, SolverParams, recover

DESK_SCALE_N = 16384
CSV_COLUMNS = ["image", "ratio", "seed", "algorithm", "psnr_db", "wall_s",
               "outer_iters", "inner_iters_total", "residual_rel"]
RUNTIME_ERRORS = (OSError, ImageError, SensingError, SolverError,
                  RegularizerError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- argument types ----------------------------------------------------------

def _number(kind, check, what):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not check(value):
            raise argparse.ArgumentTypeError(f"{text} is not {what}")
        return value
    return parse


positive_float = _number(float, lambda x: np.isfinite(x) and x > 0, "a positive number")
nonneg_float = _number(float, lambda x: np.isfinite(x) and x >= 0, "a nonnegative number")
positive_int = _number(int, lambda x: x >= 1, "a positive integer")
odd_int = _number(int, lambda x: x >= 1 and x % 2 == 1, "a positive odd integer")
ratio_type = _number(float, lambda x: 0 < x <= 1, "a ratio in (0, 1]")
seed_type = _number(int, lambda x: 0 <= x < 2 ** 64, "an unsigned 64-bit seed")


# flag name -> (argparse type, SolverParams field, NlmParams field)
SOLVER_FLAGS = {
    "alpha": (nonneg_float, "alpha", None),
    "beta": (positive_float, "beta", None),
    "mu": (positive_float, "mu", None),
    "theta": (positive_float, "theta", None),
    "patch": (odd_int, None, "patch"),
    "window": (odd_int, None, "window"),
    "h": (positive_float, None, "h"),
    "max-outer": (positive_int, "max_outer", None),
    "max-inner": (positive_int, "max_inner", None),
    "inner-tol": (positive_float, "inner_tol", None),
    "outer-tol": (positive_float, "outer_tol", None),
    "u-steps": (positive_int, "u_steps_per_inner", None),
    "w-update-every": (positive_int, "w_update_every", None),
    "top-k": (positive_int, "top_k", None),
}


def build_params(overrides: dict) -> SolverParams:
    """SolverParams from ``{flag name: value}``; None values are skipped."""
    base = SolverParams()
    top, nlm = {}, {}
    for flag, value in overrides.items():
        if value is None:
            continue
        _, field_name, nlm_name = SOLVER_FLAGS[flag]
        if nlm_name:
            nlm[nlm_name] = value
        else:
            top[field_name] = value
    try:
        return replace(base, nlm=replace(base.nlm, **nlm), **top)
    except (SolverError, RegularizerError) as exc:
        raise UsageError(str(exc)) from None


def describe_params(p: SolverParams) -> str:
    n = p.nlm
    head = (f"μ={p.mu:g}, θ={p.theta:g}, β={p.beta:g}, α={p.alpha:g}, "
            f"b_s={n.patch}, L={n.window}, h={n.h:g}")
    tail = (f"max_outer={p.max_outer}, max_inner={p.max_inner}, "
            f"inner_tol={p.inner_tol:g}, outer_tol={p.outer_tol:g}, "
            f"u_steps={p.u_steps_per_inner}, w_update_every={p.w_update_every}, "
            f"top_k={p.top_k}")
    return f"{head}\n{tail}"


def _warn_size(N: int) -> None:
    if N > DESK_SCALE_N:
        print(f"warning: N={N} exceeds {DESK_SCALE_N}; the dense operator "
              f"needs about {N * N * 8 / 2 ** 30:.1f} GiB at ratio 1",
              file=sys.stderr)


# -- sense / recover ---------------------------------------------------------

def cmd_sense(args) -> int:
    img = load_image(args.input)
    _warn_size(img.size)
    meas = sense(img, args.ratio, args.seed)
    write_measurements(meas, args.output)
    print(f"M={meas.M} N={meas.N}")
    return 0


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def cmd_recover(args) -> int:
    params = build_params({k: getattr(args, k.replace("-", "_")) for k in SOLVER_FLAGS})
    meas = read_measurements(args.measurements)
    _warn_size(meas.N)
    truth = load_image(args.truth) if args.truth else None
    if args.verbose:
        print(describe_params(params))

    rows = []
    on_inner = rows.append if args.trace else None
    result = recover(meas, params, ground_truth=truth, on_inner=on_inner)
    save_image(result.u_final, args.output)
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["outer", "inner", "residual_rel", "lagrangian", "psnr"])
            for r in rows:
                out.writerow([r.outer, r.inner, _fmt(r.residual_rel),
                              _fmt(r.lagrangian), _fmt(r.psnr)])
    if truth is not None:
        print(f"psnr_db={result.psnr_trace[-1]:.4f}")
    print(f"outer_iters={result.outer_iterations} "
          f"inner_iters_total={result.inner_iterations} "
          f"residual_rel={result.final_residual:.3e}")
    print(f"wall_s={result.wall_time:.3f}")
    return 0


# -- bench -------------------------------------------------------------------

@dataclass(frozen=True)
class BenchConfig:
    images: list
    ratios: list
    seeds: list = field(default_factory=lambda: [1])
    baseline: bool = True
    output: str = "bench"
    workers: int = 1
    params: SolverParams = field(default_factory=SolverParams)

    def __post_init__(self):
        if not self.images or not self.ratios or not self.seeds:
            raise UsageError("bench config needs nonempty images, ratios and seeds")
        for r in self.ratios:
            if not 0 < r <= 1:
                raise UsageError(f"ratio {r} outside (0, 1]")


@dataclass(frozen=True)
class BenchRecord:
    image: str
    ratio: float
    seed: int
    algorithm: str
    psnr_db: float | None = None
    wall_s: float | None = None
    outer_iters: int | None = None
    inner_iters_total: int | None = None
    residual_rel: float | None = None
    error: str | None = None

    def row(self) -> list:
        def f(x, spec):
            return "" if x is None else format(x, spec)
        return [self.image, format(self.ratio, "g"), str(self.seed), self.algorithm,
                f(self.psnr_db, ".6f"), f(self.wall_s, ".3f"),
                f(self.outer_iters, "d"), f(self.inner_iters_total, "d"),
                f(self.residual_rel, ".6e")]


def _parse_list(value, kind, key):
    try:
        return [kind(t.strip()) for t in value.split(",") if t.strip()]
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"bench config: bad {key}: {exc}") from None


def _parse_bool(value, key):
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"bench config: bad {key}: {value!r}")


def parse_bench_config(text: str, base_dir: str = ".") -> BenchConfig:
    fields, overrides = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"bench config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower().replace("_", "-")
        if key == "images":
            fields["images"] = [os.path.join(base_dir, p)
                                for p in _parse_list(value, str, key)]
        elif key == "ratios":
            fields["ratios"] = _parse_list(value, ratio_type, key)
        elif key == "seeds":
            fields["seeds"] = _parse_list(value, seed_type, key)
        elif key == "baseline":
            fields["baseline"] = _parse_bool(value, key)
        elif key == "output":
            fields["output"] = os.path.join(base_dir, value)
        elif key == "workers":
            fields["workers"] = _parse_list(value, positive_int, key)[0]
        elif key in SOLVER_FLAGS:
            parse = SOLVER_FLAGS[key][0]
            try:
                overrides[key] = parse(value)
            except argparse.ArgumentTypeError as exc:
                raise UsageError(f"bench config: bad {key}: {exc}") from None
        else:
            raise UsageError(f"bench config line {lineno}: unknown key {key!r}")
    for key in ("images", "ratios"):
        if key not in fields:
            raise UsageError(f"bench config: missing {key}")
    fields.setdefault("output", os.path.join(base_dir, "bench"))
    return BenchConfig(params=build_params(overrides), **fields)


def _image_name(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def run_cell(path: str, ratio: float, seed: int, params: SolverParams,
             algorithms: tuple, image_dir: str | None) -> list:
    """All algorithm records for one (image, ratio, seed) cell."""
    name = _image_name(path)
    try:
        img = load_image(path)
        meas = sense(img, ratio, seed)
        A = meas.operator()
    except Exception as exc:     # recorded, never fatal for the grid
        return [BenchRecord(name, ratio, seed, alg, error=str(exc))
                for alg in algorithms]
    records = []
    for alg in algorithms:
        p = params if alg == "tvnlr" else params.with_(alpha=0.0)
        try:
            res = recover(meas, p, ground_truth=img, operator=A)
            if image_dir is not None:
                save_image(res.u_final, os.path.join(
                    image_dir, f"{name}_r{ratio:g}_s{seed}_{alg}.png"))
            records.append(BenchRecord(name, ratio, seed, alg, res.psnr_trace[-1],
                                       res.wall_time, res.outer_iterations,
                                       res.inner_iterations, res.final_residual))
        except Exception as exc:
            records.append(BenchRecord(name, ratio, seed, alg, error=str(exc)))
    return records


def run_bench(cfg: BenchConfig, image_dir: str | None = None) -> list:
    algorithms = ("tvnlr", "tv-only") if cfg.baseline else ("tvnlr",)
    for path in cfg.images:
        try:
            _warn_size(load_image(path).size)
        except RUNTIME_ERRORS:
            pass                 # reported per cell
    cells = [(path, r, s) for path in cfg.images for r in cfg.ratios for s in cfg.seeds]
    args = [(path, r, s, cfg.params, algorithms, image_dir) for path, r, s in cells]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            futures = [pool.submit(run_cell, *a) for a in args]
            # collected in grid order regardless of completion order
            results = [f.result() for f in futures]
    else:
        results = [run_cell(*a) for a in args]
    return [rec for cell in results for rec in cell]


def summarize(records: list) -> tuple[list, list]:
    """Per-cell gains and per-ratio mean gains of tvnlr over tv-only."""
    by_cell = {}
    for rec in records:
        by_cell.setdefault((rec.image, rec.ratio, rec.seed), {})[rec.algorithm] = rec
    cell_gains, per_ratio = [], {}
    for (image, ratio, seed), algs in by_cell.items():
        a, b = algs.get("tvnlr"), algs.get("tv-only")
        if a is None or b is None or a.psnr_db is None or b.psnr_db is None:
            continue
        gain = a.psnr_db - b.psnr_db
        cell_gains.append((image, ratio, seed, gain))
        per_ratio.setdefault(ratio, []).append(gain)
    ratio_gains = [(r, float(np.mean(g)), len(g)) for r, g in per_ratio.items()]
    return cell_gains, ratio_gains


def format_bench_csv(records: list) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(CSV_COLUMNS)
    for rec in records:
        out.writerow(rec.row())
    cell_gains, ratio_gains = summarize(records)
    if cell_gains:
        buf.write("\n# summary: psnr gain of tvnlr over tv-only\n")
        out.writerow(["image", "ratio", "seed", "gain_db"])
        for image, ratio, seed, gain in cell_gains:
            out.writerow([image, format(ratio, "g"), seed, format(gain, ".6f")])
        buf.write("\n")
        out.writerow(["ratio", "mean_gain_db", "cells"])
        for ratio, gain, n in ratio_gains:
            out.writerow([format(ratio, "g"), format(gain, ".6f"), n])
    return buf.getvalue()


def cmd_bench(args) -> int:
    with open(args.config) as fh:
        text = fh.read()
    cfg = parse_bench_config(text, os.path.dirname(os.path.abspath(args.config)))
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    image_dir = os.path.join(cfg.output, "images")
    os.makedirs(image_dir, exist_ok=True)
    records = run_bench(cfg, image_dir)
    out_path = os.path.join(cfg.output, "bench.csv")
    with open(out_path, "w", newline="") as fh:
        fh.write(format_bench_csv(records))
    failed = [r for r in records if r.error is not None]
    for r in failed:
        print(f"cell failed: {r.image} ratio={r.ratio:g} seed={r.seed} "
              f"{r.algorithm}: {r.error}", file=sys.stderr)
    print(f"wrote {len(records)} records to {out_path}")
    _, ratio_gains = summarize(records)
    for ratio, gain, n in ratio_gains:
        print(f"ratio {ratio:g}: mean gain {gain:+.3f} dB over {n} cells")
    return 2 if failed else 0


# -- entry point ---------------------------------------------------------------

def _add_solver_flags(p):
    g = p.add_argument_group("solver parameters")
    for flag, (kind, *_) in SOLVER_FLAGS.items():
        g.add_argument(f"--{flag}", type=kind, default=None)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tvnlr", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    s = sub.add_parser("sense", help="measure an image with a seeded Gaussian operator")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--ratio", type=ratio_type, required=True)
    s.add_argument("--seed", type=seed_type, default=1)
    s.set_defaults(func=cmd_sense)

    r = sub.add_parser("recover", help="reconstruct an image from measurements")
    r.add_argument("measurements")
    r.add_argument("output")
    r.add_argument("--truth", help="ground-truth image for PSNR")
    r.add_argument("--trace", help="per-iteration trace CSV")
    r.add_argument("--verbose", "-v", action="store_true")
    _add_solver_flags(r)
    r.set_defaults(func=cmd_recover)

    b = sub.add_parser("bench", help="run the benchmark grid")
    b.add_argument("config")
    b.add_argument("--workers", type=positive_int, default=None)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
