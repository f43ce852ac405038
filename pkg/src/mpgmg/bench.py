"""Command-line sweeps over problem sizes, frequencies and precision variants.

Every run writes one CSV row. After the sweep a summary table of mean outer
iteration counts (variant x k, averaged over grid sizes and repetitions) is
printed. Wall time is recorded but is the only nondeterministic column.
"""
import argparse
import csv
import dataclasses
import logging
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from mpgmg.ir_solver import DivergenceError, IrConfig, solve_problem
from mpgmg.mesh_fem import ProblemSpec
from mpgmg.multigrid import (VARIANTS, BaseSolverConfig, BuildError,
                             SmootherConfig)
from mpgmg.precision import FP16, FP32, ArithmeticPolicy
from mpgmg.sparse import UsageError

__all__ = ['RunSpec', 'CsvRow', 'run_sweep', 'summarize', 'format_summary',
           'emit_convergence_plotdata', 'main', 'DEFAULT_NODES']

log = logging.getLogger(__name__)

DEFAULT_NODES = {2: (257, 513, 1025), 3: (33, 65)}


@dataclass(frozen=True)
class RunSpec:
    """A sweep: every (k, size, variant, repetition) combination is run."""

    dim: int = 2
    ks: tuple = (1, 20, 400)
    nodes_per_dim: tuple = None
    levels: int = None
    variants: tuple = VARIANTS
    seed: int = 0
    repetitions: int = 1
    output: Path = Path('sweep.csv')
    ir: IrConfig = None
    smoother: SmootherConfig = SmootherConfig()
    base: BaseSolverConfig = BaseSolverConfig()
    policy: ArithmeticPolicy = ArithmeticPolicy()
    validate: bool = False
    plot_dir: Path = None

    def __post_init__(self):
        if self.nodes_per_dim is None:
            object.__setattr__(self, 'nodes_per_dim',
                               DEFAULT_NODES.get(self.dim, ()))
        if self.ir is None:
            object.__setattr__(self, 'ir', IrConfig(initial_guess='random',
                                                    seed=self.seed))
        if self.repetitions < 1:
            raise UsageError("repetitions must be at least 1")
        for v in self.variants:
            if v not in VARIANTS:
                raise UsageError(f"unknown variant {v!r}")
        # Fails early on incompatible sizes.
        for n in self.nodes_per_dim:
            for k in self.ks:
                self.problem(k, n)

    def problem(self, k, nodes):
        return ProblemSpec(dim=self.dim, k=k, finest_nodes_per_dim=nodes,
                           levels=self.levels)


@dataclass
class CsvRow:
    dim: int
    k: int
    nodes_per_dim: int
    variant: str
    iterations: int
    final_residual: float
    l2_error_vs_exact: float
    value_bytes_moved: int
    wall_time_s: float
    seed: int
    converged: bool = field(default=False, metadata={'csv': False})

    @classmethod
    def fields(cls):
        return [f.name for f in dataclasses.fields(cls)
                if f.metadata.get('csv', True)]

    def as_csv(self):
        out = {}
        for name in self.fields():
            v = getattr(self, name)
            out[name] = repr(v) if isinstance(v, float) else v
        return out


def _run_one(spec, k, nodes, variant):
    problem = spec.problem(k, nodes)
    try:
        _, rep = solve_problem(problem, variant, spec.ir, spec.smoother,
                               spec.base, spec.policy, spec.validate)
    except (BuildError, DivergenceError, UsageError, AssertionError) as exc:
        log.error("%s n=%d k=%d failed: %s", variant, nodes, k, exc)
        return CsvRow(spec.dim, k, nodes, variant, -1, math.nan, math.nan,
                      0, 0.0, spec.seed), None
    row = CsvRow(spec.dim, k, nodes, variant, rep.iterations,
                 rep.final_residual, rep.final_error_l2, rep.value_bytes,
                 rep.wall_time, spec.seed, rep.converged)
    return row, rep


def run_sweep(spec, echo=None):
    """Run ``spec``, write its CSV and return the rows.

    Rows are flushed as they are produced, so a crash leaves a partial file.
    ``echo`` (e.g. ``print``) receives one progress line per run.
    """
    rows = []
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    with open(spec.output, 'w', newline='') as fh:
        writer = csv.DictWriter(fh, fieldnames=CsvRow.fields(),
                                lineterminator='\n')
        writer.writeheader()
        for k in spec.ks:
            for nodes in spec.nodes_per_dim:
                for variant in spec.variants:
                    for rep_i in range(spec.repetitions):
                        row, rep = _run_one(spec, k, nodes, variant)
                        rows.append(row)
                        writer.writerow(row.as_csv())
                        fh.flush()
                        if spec.plot_dir is not None and rep is not None:
                            name = (f"{spec.dim}d_{nodes}_k{k}_{variant}"
                                    f"_r{rep_i}.dat")
                            emit_convergence_plotdata(
                                rep, Path(spec.plot_dir) / name)
                        if echo:
                            echo(f"{variant:7s} n={nodes:<5d} k={k:<4d} "
                                 f"it={row.iterations:<3d} "
                                 f"|r|={row.final_residual:.3e} "
                                 f"t={row.wall_time_s:.1f}s")
    return rows


def summarize(rows):
    """Mean iteration count per (variant, k) as exact fractions.

    Failed runs are skipped.
    """
    groups = {}
    for r in rows:
        if r.iterations >= 0:
            groups.setdefault((r.variant, r.k), []).append(r.iterations)
    return {key: Fraction(sum(v), len(v)) for key, v in groups.items()}


def _one_decimal(q):
    # Round half up on exact fractions.
    tenths = math.floor(q * 10 + Fraction(1, 2))
    return f"{tenths // 10}.{tenths % 10}"


def format_summary(rows):
    means = summarize(rows)
    variants = list(dict.fromkeys(r.variant for r in rows))
    ks = list(dict.fromkeys(r.k for r in rows))
    lines = ['variant  ' + ''.join(f"k={k:<8d}" for k in ks)]
    for v in variants:
        cells = [_one_decimal(means[v, k]) if (v, k) in means else '-'
                 for k in ks]
        lines.append(f"{v:9s}" + ''.join(f"{c:10s}" for c in cells))
    return '\n'.join(lines)


def emit_convergence_plotdata(report, path):
    """Write ``iteration residual_norm`` columns for ``report``.

    A report without history produces a header-only file.
    """
    with open(path, 'w') as fh:
        fh.write('# iteration residual_norm\n')
        for i, r in enumerate(report.residual_history):
            fh.write(f"{i} {r!r}\n")


def _parser():
    p = argparse.ArgumentParser(
        prog='mpgmg-bench',
        description='Mixed-precision multigrid refinement sweeps.')
    p.add_argument('--dim', type=int, default=2, choices=(2, 3))
    p.add_argument('--k', type=int, nargs='+', default=[1, 20, 400])
    p.add_argument('--nodes', type=int, nargs='+',
                   help='nodes per dimension incl. boundary (default: '
                        '257 513 1025 in 2D, 33 65 in 3D)')
    p.add_argument('--levels', type=int,
                   help='grid levels (default: coarsest grid of 9 nodes '
                        'in 2D, 5 in 3D)')
    p.add_argument('--variant', nargs='+', default=list(VARIANTS),
                   choices=VARIANTS)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--reps', type=int, default=1)
    p.add_argument('--initial-guess', choices=('random', 'zeros'),
                   default='random')
    p.add_argument('--out', type=Path, default=Path('sweep.csv'))
    p.add_argument('--plot-dir', type=Path)
    p.add_argument('--tol-outer', type=float, default=1e-9)
    p.add_argument('--max-outer', type=int, default=100)
    p.add_argument('--tol-base', type=float, default=1e-4)
    p.add_argument('--nu1', type=int, default=3)
    p.add_argument('--nu2', type=int, default=3)
    p.add_argument('--omega', type=float, default=2 / 3)
    p.add_argument('--fp16-accum', choices=('fp16', 'fp32'), default='fp16',
                   help='accumulator format of binary16 matrix products')
    p.add_argument('--no-ftz', action='store_true',
                   help='keep subnormal results instead of flushing them')
    p.add_argument('--no-scaling', action='store_true',
                   help='disable residual scaling in the outer loop')
    p.add_argument('--validate', action='store_true',
                   help='check formats and finiteness at every level')
    p.add_argument('-v', '--verbose', action='store_true')
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else
                        logging.WARNING, format='%(levelname)s %(message)s')
    try:
        ir = IrConfig(outer_tolerance=args.tol_outer,
                      max_outer_iterations=args.max_outer,
                      initial_guess=args.initial_guess, seed=args.seed,
                      residual_scaling=False if args.no_scaling else None)
        spec = RunSpec(
            dim=args.dim, ks=tuple(args.k),
            nodes_per_dim=tuple(args.nodes) if args.nodes else None,
            levels=args.levels, variants=tuple(args.variant),
            seed=args.seed, repetitions=args.reps, output=args.out, ir=ir,
            smoother=SmootherConfig(args.nu1, args.nu2, args.omega),
            base=BaseSolverConfig(tolerance=args.tol_base),
            policy=ArithmeticPolicy(
                flush_subnormals_to_zero=not args.no_ftz,
                fp16_accumulation=FP32 if args.fp16_accum == 'fp32' else FP16),
            validate=args.validate, plot_dir=args.plot_dir)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if spec.plot_dir is not None:
        spec.plot_dir.mkdir(parents=True, exist_ok=True)
    rows = run_sweep(spec, echo=print)
    print()
    print(format_summary(rows))
    print(f"\nwrote {len(rows)} rows to {spec.output}")
    return 0 if all(r.converged for r in rows) else 1


if __name__ == '__main__':
    sys.exit(main())
