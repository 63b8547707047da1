"""Command-line interface: ``mlfiber <command> [instance] [options]``.

Every command that writes files also writes ``manifest.json`` into the output
directory. Passing that manifest back with ``--config`` reproduces the run.

Exit codes: 0 success, 2 usage error, 3 data or validation error,
4 numerical problem (level starvation, Brownian stall, overflow). Outputs
are still written when the problem is only a starvation warning.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import warnings
from datetime import datetime, timezone

import numpy as np

from . import benchmarks as bm
from .core import (
    ConvergenceError,
    DesignMatrix,
    IntegerOverflowError,
    chi_square_statistic,
    euclidean_norm_statistic,
    fit_expected_table,
)
from .experiments import (
    DEFAULT_N_VALUES,
    FCS_SAMPLERS,
    brownian_candidates,
    default_radii,
    fcs_experiment,
    mmd_experiment,
)
from .metrics import _greedy_indices
from .moves import InvalidBasisError, lattice_basis, load_basis
from .multilevel import (
    DensityEstimate,
    Grid,
    SmoothingKernel,
    auto_grid,
    edge_fraction,
    gaussian_smooth,
    kde,
    multilevel_density,
)
from .samplers import (
    BrownianStallError,
    ChainConfig,
    LevelSchedule,
    LevelStarvationWarning,
    StepSizeSampler,
    UniformWalk,
    child_seed,
    run_chain,
    run_level_samples,
)
from .textio import MatrixFormatError, format_matrix, read_matrix, read_vector

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SEED_MAX = 2**64 - 1
_SAMPLER_MODES = {"ds": "hypergeometric", "ds-inverted": "inverted", "uniform": None}
# dests that describe where/how a run executes rather than what it computes
_NOT_PARAMS = {"func", "config", "out", "command"}


class UsageError(Exception):
    pass


# -- small helpers -------------------------------------------------------------------

def _atomic_write(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_bytes(header: str, rows) -> bytes:
    lines = [header] + [",".join(_fmt(v) for v in row) for row in rows]
    return ("\n".join(lines) + "\n").encode("ascii")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _seed(value: str) -> int:
    s = int(value)
    if not 0 <= s <= SEED_MAX:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return s


def _positive(value: str) -> int:
    v = int(value)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


class Run:
    """Collects outputs and warnings for one command and writes the manifest."""

    def __init__(self, args: argparse.Namespace, argv: list[str]):
        self.args = args
        self.argv = argv
        self.outputs: list[str] = []
        self.warnings: list[str] = []
        self.started = datetime.now(timezone.utc).isoformat()

    @property
    def out(self) -> str | None:
        return self.args.out

    def write(self, name: str, data: bytes) -> None:
        os.makedirs(self.out, exist_ok=True)
        _atomic_write(os.path.join(self.out, name), data)
        self.outputs.append(name)

    def manifest(self) -> None:
        if self.out is None:
            return
        params = {k: v for k, v in sorted(vars(self.args).items()) if k not in _NOT_PARAMS}
        doc = {
            "command": self.args.command,
            "argv": self.argv,
            "seed": getattr(self.args, "seed", None),
            "instance": _instance_label(self.args),
            "params": params,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "outputs": self.outputs,
            "warnings": self.warnings,
        }
        os.makedirs(self.out, exist_ok=True)
        _atomic_write(os.path.join(self.out, "manifest.json"),
                      (json.dumps(doc, indent=2) + "\n").encode("ascii"))


# -- instances ------------------------------------------------------------------------

def _instance_label(args) -> str | None:
    if getattr(args, "design", None):
        return "custom"
    name = getattr(args, "instance", None)
    if name == "hemmecke":
        return f"hemmecke(k={args.k})"
    return name


def load_instance(args) -> bm.FiberInstance:
    """Catalog instance by name, or a custom one from ``--design``/``--start``/``--basis`` files."""
    if args.design:
        if not args.start:
            raise UsageError("--design needs --start")
        A = DesignMatrix.from_rows(read_matrix(args.design))
        start = tuple(read_vector(args.start))
        lat = lattice_basis(A)
        markov = load_basis(args.basis, A, kind="markov") if args.basis else None
        return bm.FiberInstance("custom", A, A.apply(start), start, lat, markov)
    if not args.instance:
        raise UsageError("an instance name or --design/--start files are required")
    try:
        return bm.get_instance(args.instance, args.k)
    except KeyError as e:
        raise UsageError(str(e.args[0])) from None


def pick_statistic(inst: bm.FiberInstance, which: str):
    if which == "norm":
        return euclidean_norm_statistic
    if which == "chi2" or inst.A.is_nonnegative_01():
        return chi_square_statistic(fit_expected_table(inst.A, inst.b))
    return euclidean_norm_statistic


def _grid(args, inst, values, kern) -> Grid:
    if args.grid is not None:
        lo, hi, k = args.grid
        if k != int(k) or k < 2:
            raise UsageError("grid point count must be an integer >= 2")
        return Grid.linspace(lo, hi, int(k))
    if inst.grid is not None:
        lo, hi, k = inst.grid
        return Grid.linspace(lo, hi, k)
    return auto_grid(values, kern)


def _edge_check(run: Run, values, grid: Grid, kern, label: str) -> None:
    frac = edge_fraction(values, grid, kern)
    if frac > 0.01:
        run.warnings.append(f"{label}: {frac:.1%} of statistic values lie within one bandwidth of "
                            f"the grid ends or outside [{grid.points[0]:g}, {grid.points[-1]:g}]; "
                            f"the density mass will be short (try --grid)")


# -- commands -----------------------------------------------------------------------

def cmd_sample(args, run: Run) -> int:
    inst = load_instance(args)
    stat = pick_statistic(inst, args.statistic)
    mode = _SAMPLER_MODES[args.sampler]
    if mode is None:
        stepper = UniformWalk(inst.moves, args.multiplier)
    else:
        stepper = StepSizeSampler(inst.moves, mode)
    cfg = ChainConfig(inst.moves, inst.start, args.steps, args.seed, args.record_every, args.burn_in)
    rec = run_chain(cfg, stepper, stat)
    header = "step,statistic"
    if args.cells:
        header += "," + ",".join(f"x{i + 1}" for i in range(inst.A.n_cols))
        rows = ([i + 1, v, *s] for i, (s, v) in enumerate(zip(rec.states.tolist(), rec.values)))
    else:
        rows = ([i + 1, v] for i, v in enumerate(rec.values))
    run.write("chain.csv", _csv_bytes(header, rows))
    if args.density:
        kern = SmoothingKernel(args.delta)
        grid = _grid(args, inst, rec.values, kern)
        raw = kde(rec.values, grid, kern)
        est = DensityEstimate(grid, raw, gaussian_smooth(raw, args.sigma), args.sigma)
        _edge_check(run, rec.values, grid, kern, "kde")
        run.write("kde.csv", _density_bytes(est))
    print(f"{len(rec)} states, {rec.accepted} accepted moves -> {args.out}")
    return EXIT_OK


def _density_bytes(est: DensityEstimate) -> bytes:
    rows = zip(est.grid.points, est.raw, est.smoothed)
    return _csv_bytes("s,raw,smoothed", rows)


def _schedule(args) -> LevelSchedule:
    L = args.levels
    mult = tuple(args.multipliers) if args.multipliers else tuple(range(L, 0, -1))
    n = tuple(args.samples) if args.samples else LevelSchedule.halving(L, args.base).samples_per_level
    if len(mult) != L or len(n) != L:
        raise UsageError(f"--multipliers and --samples need exactly {L} values")
    try:
        return LevelSchedule(mult, n)
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_density(args, run: Run) -> int:
    inst = load_instance(args)
    stat = pick_statistic(inst, args.statistic)
    schedule = _schedule(args)
    kern = SmoothingKernel(args.delta)
    starved = False
    for r in range(args.repeat):
        seed = args.seed if args.repeat == 1 else child_seed(args.seed, "repeat", r)
        cfg = ChainConfig(inst.moves, inst.start, 1, seed)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", LevelStarvationWarning)
            samples = run_level_samples(schedule, cfg, stat, keep_states=False)
        starved |= any(issubclass(w.category, LevelStarvationWarning) for w in caught)
        label = "density" if args.repeat == 1 else f"density_{r + 1:03d}"
        run.warnings.extend(f"{label}: {w}" for w in samples.warnings)
        grid = _grid(args, inst, samples.Y[0], kern)
        raw = multilevel_density(samples, grid, kern)
        est = DensityEstimate(grid, raw, gaussian_smooth(raw, args.sigma), args.sigma)
        _edge_check(run, np.concatenate(samples.Y), grid, kern, label)
        run.write(label + ".csv", _density_bytes(est))
        print(f"{label}: mass {est.mass():.6f} on {grid.k} grid points")
    return EXIT_NUMERIC if starved else EXIT_OK


def cmd_mmd(args, run: Run) -> int:
    inst = load_instance(args)
    if inst.markov_basis is None:
        run.warnings.append("instance has no Markov basis; chains use the lattice basis")
    schedule = _schedule(args)
    rows = mmd_experiment(inst, args.seed, args.reference_size, args.n, args.trials,
                          schedule, args.space, args.threads)
    run.write("mmd.csv", _csv_bytes("n,trial,mmd2,method", ((r.n, r.trial, r.mmd2, r.method) for r in rows)))
    print(f"{len(rows)} rows -> {args.out}")
    return EXIT_OK


def cmd_fcs(args, run: Run) -> int:
    inst = load_instance(args)
    C = brownian_candidates(inst, args.n_centers, args.seed, args.brownian_sigma, args.dt)
    radii = sorted(args.radii, reverse=True) if args.radii else default_radii(C)
    if len(set(radii)) != len(radii):
        raise UsageError("radii must be distinct")
    schedule = _schedule(args)
    rows = fcs_experiment(inst, args.seed, C, radii, args.samplers, args.sample_size,
                          args.runs, schedule, args.threads)
    run.write("fcs.csv", _csv_bytes("r,K,H_K,method", ((r.r, r.K, r.H_K, r.method) for r in rows)))
    run.write("candidates.csv", _csv_bytes(",".join(f"z{i + 1}" for i in range(C.shape[1])), C.tolist()))
    run.write("centers.csv", _csv_bytes("candidate,first_radius_index", _center_order(C, radii)))
    print(f"{len(rows)} rows -> {args.out}")
    return EXIT_OK


def _center_order(C, radii):
    """Kept candidate indices with the sweep position at which each first appears."""
    idx: list[int] = []
    out = []
    for k, r in enumerate(radii):
        new = _greedy_indices(C, r, idx)
        out.extend((i, k) for i in new[len(idx):])
        idx = new
    return out


def cmd_enumerate(args, run: Run) -> int:
    inst = load_instance(args)
    pts = bm.enumerate_fiber(inst.A, inst.b, cap=args.cap)
    text = format_matrix(pts, inst.A.n_cols) if pts else f"0 {inst.A.n_cols}\n"
    if args.out is not None:
        run.write("points.txt", text.encode("ascii"))
        print(f"{len(pts)} points -> {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_count(args, run: Run) -> int:
    inst = load_instance(args)
    n = bm.count_fiber(inst.A, inst.b, cap=args.cap)
    if args.out is not None:
        run.write("count.txt", f"{n}\n".encode("ascii"))
    print(n)
    return EXIT_OK


def cmd_bench(args, run: Run) -> int:
    if args.action == "export":
        return _bench_export(args, run)
    lines = ["name,cells,rows,markov_moves,lattice_moves,known_count"]
    for name in bm.CATALOG:
        inst = bm.get_instance(name, args.k)
        nm = len(inst.markov_basis) if inst.markov_basis is not None else ""
        kc = inst.known_count if inst.known_count is not None else ""
        label = f"hemmecke(k={args.k})" if name == "hemmecke" else name
        lines.append(f"{label},{inst.A.n_cols},{inst.A.n_rows},{nm},{len(inst.lattice_basis)},{kc}")
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        run.write("bench.csv", text.encode("ascii"))
    sys.stdout.write(text)
    return EXIT_OK


def _bench_export(args, run: Run) -> int:
    if not args.name or args.out is None:
        raise UsageError("bench export needs an instance name and --out")
    try:
        inst = bm.get_instance(args.name, args.k)
    except KeyError as e:
        raise UsageError(str(e.args[0])) from None
    n = inst.A.n_cols
    run.write("design.txt", format_matrix(inst.A.rows, n).encode("ascii"))
    run.write("start.txt", format_matrix([inst.start], n).encode("ascii"))
    run.write("lattice.txt", format_matrix(inst.lattice_basis.vectors(), n).encode("ascii"))
    if inst.markov_basis is not None:
        run.write("markov.txt", format_matrix(inst.markov_basis.vectors(), n).encode("ascii"))
    print(f"{inst.name} -> {args.out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def _add_instance(p: argparse.ArgumentParser) -> None:
    p.add_argument("instance", nargs="?", help=f"catalog instance ({', '.join(bm.CATALOG)})")
    p.add_argument("--k", type=_positive, default=1, help="Hemmecke parameter")
    p.add_argument("--design", help="design matrix file for a custom instance")
    p.add_argument("--start", help="start point file for a custom instance")
    p.add_argument("--basis", help="Markov basis file for a custom instance")


def _add_schedule(p: argparse.ArgumentParser) -> None:
    p.add_argument("--levels", type=_positive, default=4)
    p.add_argument("--multipliers", type=_positive, nargs="+", help="coarsest to finest, ending in 1")
    p.add_argument("--samples", type=_positive, nargs="+", help="samples per level, coarsest first")
    p.add_argument("--base", type=_positive, default=100_000, help="N_1 for the halving schedule")


def _add_density_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", type=float, nargs=3, metavar=("LO", "HI", "K"))
    p.add_argument("--delta", type=float, default=1.0, help="kernel bandwidth")
    p.add_argument("--sigma", type=float, default=2.0, help="Gaussian filter width in grid points")
    p.add_argument("--statistic", choices=("auto", "chi2", "norm"), default="auto")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, help="64-bit unsigned seed (random and recorded if omitted)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="key=value file or a manifest.json from an earlier run")
    common.add_argument("--threads", type=_positive, default=1)

    parser = argparse.ArgumentParser(prog="mlfiber", description="Multilevel sampling on lattice fibers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", parents=[common], help="run one chain and record the statistic")
    _add_instance(p)
    p.add_argument("--sampler", choices=tuple(_SAMPLER_MODES), default="ds")
    p.add_argument("--steps", type=_positive, default=100_000)
    p.add_argument("--multiplier", type=_positive, default=1, help="move multiplier for --sampler uniform")
    p.add_argument("--record-every", type=_positive, default=1)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--cells", action="store_true", help="also write the table cells")
    p.add_argument("--density", action="store_true", help="also write a single-level KDE")
    _add_density_opts(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("density", parents=[common], help="smoothed multilevel density estimate")
    _add_instance(p)
    _add_schedule(p)
    _add_density_opts(p)
    p.add_argument("--repeat", type=_positive, default=1)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("mmd", parents=[common], help="MMD of MCMC and multilevel samples vs a reference")
    _add_instance(p)
    _add_schedule(p)
    p.add_argument("--reference-size", type=_positive, default=100_000)
    p.add_argument("--n", type=_positive, nargs="+", default=list(DEFAULT_N_VALUES))
    p.add_argument("--trials", type=_positive, default=30)
    p.add_argument("--space", choices=("points", "statistic"), default="points")
    p.set_defaults(func=cmd_mmd)

    p = sub.add_parser("fcs", parents=[common], help="fiber coverage score sweep")
    _add_instance(p)
    _add_schedule(p)
    p.add_argument("--n-centers", type=_positive, default=5000, help="Brownian candidate count")
    p.add_argument("--radii", type=float, nargs="+")
    p.add_argument("--samplers", nargs="+", choices=FCS_SAMPLERS + ("mcmc",), default=list(FCS_SAMPLERS))
    p.add_argument("--sample-size", type=_positive, default=10_000)
    p.add_argument("--runs", type=_positive, default=10)
    p.add_argument("--brownian-sigma", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=0.1)
    p.set_defaults(func=cmd_fcs)

    for name, fn, cap in (("enumerate", cmd_enumerate, 100_000), ("count", cmd_count, 10**9)):
        p = sub.add_parser(name, parents=[common], help=f"{name} fiber points exactly")
        _add_instance(p)
        p.add_argument("--cap", type=_positive, default=cap)
        p.set_defaults(func=fn)

    p = sub.add_parser("bench", parents=[common], help="bundled benchmark instances")
    p.add_argument("action", choices=("list", "export"))
    p.add_argument("name", nargs="?", help="instance to export")
    p.add_argument("--k", type=_positive, default=1)
    p.set_defaults(func=cmd_bench)
    return parser


# -- config -----------------------------------------------------------------------------

def _read_config(path: str, command: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        if doc.get("command") != command:
            raise UsageError(f"manifest is for {doc.get('command')!r}, not {command!r}")
        return dict(doc.get("params", {}))
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _coerce(action: argparse.Action, value):
    """Turn a config value into what the flag would have produced."""
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if value is None:
        return None
    conv = action.type or (lambda s: s)
    if action.nargs in ("+", "*") or isinstance(action.nargs, int):
        items = value.replace(",", " ").split() if isinstance(value, str) else list(value)
        vals = [conv(v) if isinstance(v, str) else v for v in items]
        if isinstance(action.nargs, int) and len(vals) != action.nargs:
            raise UsageError(f"{action.dest} needs {action.nargs} values")
        return vals
    v = conv(value) if isinstance(value, str) else value
    if action.choices is not None and v not in action.choices:
        raise UsageError(f"{action.dest}: invalid choice {v!r}")
    return v


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    values = _read_config(args.config, args.command)
    defaults = {}
    for key, value in values.items():
        if key in _NOT_PARAMS:
            continue
        if key not in actions:
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        try:
            defaults[key] = _coerce(actions[key], value)
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise UsageError(f"config key {key!r}: {e}") from None
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- entry point ----------------------------------------------------------------------------

def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as e:
        print(f"mlfiber: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"mlfiber: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "seed", None) is None:
        args.seed = int(np.random.SeedSequence().generate_state(1, np.uint64)[0])
    if args.command in ("sample", "density", "mmd", "fcs") and args.out is None:
        args.out = "."
    run = Run(args, argv)
    try:
        code = args.func(args, run)
    except UsageError as e:
        print(f"mlfiber: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except bm.CapExceededError as e:
        run.warnings.append(str(e))
        code = EXIT_DATA
    except (BrownianStallError, ConvergenceError, IntegerOverflowError) as e:
        run.warnings.append(f"numerical error: {e}")
        code = EXIT_NUMERIC
    except (ValueError, KeyError, OSError, MatrixFormatError, InvalidBasisError) as e:
        print(f"mlfiber: error: {e}", file=sys.stderr)
        return EXIT_DATA
    for w in run.warnings:
        print(f"mlfiber: warning: {w}", file=sys.stderr)
    run.manifest()
    return code


if __name__ == "__main__":
    sys.exit(main())
