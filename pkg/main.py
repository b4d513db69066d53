import argparse
import logging
import sys
from pathlib import Path

from config import DEFAULT_MAX_ITERS, DEFAULT_TOL, QPRUNE_LOG_LEVEL, validate_config
from errors import ConfigError, QpruneError
from mask import Selector, SelectorConfig
from pipeline import RunConfig, SolverKind, UpdateMode, prune_model
from report import load_report, print_summary
from solver import RestartPolicy, SolverConfig
from synthetic import generate_model
from tensor import Activation
from verify import DEFAULT_AGREEMENT_TOL, DEFAULT_PER_DIM, DEFAULT_SOLVER_TOL, dump_instance, run_verify

logger = logging.getLogger(__name__)


def _number(kind, check, description):
    def parse(text: str):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {description}, got {text!r}")
        if not check(value):
            raise argparse.ArgumentTypeError(f"expected {description}, got {text}")
        return value
    return parse


_sparsity = _number(float, lambda v: 0 <= v < 1, "a fraction in [0, 1)")
_rho = _number(float, lambda v: 0 <= v < 1, "a correlation in [0, 1)")
_threshold = _number(float, lambda v: 0 < v <= 1, "a fraction in (0, 1]")
_positive_float = _number(float, lambda v: v > 0, "a positive number")
_non_negative_float = _number(float, lambda v: v >= 0, "a non-negative number")
_positive_int = _number(int, lambda v: v >= 1, "a positive integer")
_at_least_two = _number(int, lambda v: v >= 2, "an integer >= 2")
_seed = _number(int, lambda v: v >= 0, "a non-negative integer")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qprune",
        description="Post-training pruning with column-wise QP weight reconstruction.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", parents=[common], help="prune a model and reconstruct the kept weights")
    p.add_argument("--model", type=Path, required=True, help="model manifest (JSON)")
    p.add_argument("--calib", type=Path, required=True, help="calibration inputs, QPTN n_tokens x d_in")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--sparsity", type=_sparsity, default=0.5)
    p.add_argument("--pattern", default="unstructured", help="unstructured or N:M, e.g. 2:4")
    p.add_argument("--selector", choices=[s.value for s in Selector], default=Selector.MAGNITUDE.value)
    p.add_argument("--mask-file", type=Path, help="QPTN mask, or a directory of <layer>.qptn masks")
    p.add_argument("--update", choices=[u.value for u in UpdateMode], default=UpdateMode.QP.value)
    p.add_argument("--tol", type=_positive_float, default=DEFAULT_TOL, help="relative and absolute tolerance")
    p.add_argument("--max-iters", type=_positive_int, default=DEFAULT_MAX_ITERS)
    p.add_argument("--restart", default="adaptive", help="adaptive or fixed:K")
    p.add_argument("--batch-cols", type=_positive_int, help="columns per solver batch (QPRUNE_BATCH_COLS)")
    p.add_argument("--damping", type=_non_negative_float, help="Hessian damping fraction (QPRUNE_DAMPING)")
    p.add_argument("--skip-threshold", type=_threshold, help="minimum converged fraction (QPRUNE_SKIP_THRESHOLD)")
    p.add_argument("--solver", choices=[k.value for k in SolverKind], default=SolverKind.ITERATIVE.value)
    p.add_argument("--direct-max-dim", type=_positive_int, help="solve layers with d_in <= N directly")
    p.add_argument("--seq-len", type=_positive_int, help="calibration rows per sequence")
    p.add_argument("--dump-hessian", action="store_true", help="write each layer's Hessian")
    p.add_argument("--threads", type=_positive_int, help="worker threads (capped by QPRUNE_THREADS)")
    p.add_argument("--seed", type=_seed, default=0)
    p.set_defaults(handler=cmd_prune)

    g = sub.add_parser("gen-synthetic", parents=[common], help="write a seeded synthetic model and calibration set")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--layers", type=_positive_int, default=4)
    g.add_argument("--dim", type=_at_least_two, default=128)
    g.add_argument("--rows", type=_positive_int, default=4096)
    g.add_argument("--rho", type=_rho, default=0.6)
    g.add_argument("--activation", choices=[a.value for a in Activation], default=Activation.RELU.value)
    g.add_argument("--seed", type=_seed, default=0)
    g.set_defaults(handler=cmd_gen_synthetic)

    v = sub.add_parser("verify", parents=[common], help="check the iterative solver against the direct oracle")
    v.add_argument("--tol", type=_non_negative_float, default=DEFAULT_AGREEMENT_TOL)
    v.add_argument("--solver-tol", type=_positive_float, default=DEFAULT_SOLVER_TOL)
    v.add_argument("--per-dim", type=_positive_int, default=DEFAULT_PER_DIM, help="instances per dimension")
    v.add_argument("--seed", type=_seed, default=0)
    v.add_argument("--out", type=Path, help="directory for the worst instance on failure")
    v.set_defaults(handler=cmd_verify)

    r = sub.add_parser("report", parents=[common], help="print the summary of a finished run")
    r.add_argument("--out", type=Path, required=True, help="output directory of a prune run")
    r.set_defaults(handler=cmd_report)
    return parser


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    """Translate prune flags into a RunConfig; flag conflicts raise ConfigError."""
    selector = SelectorConfig(
        selector=Selector(args.selector),
        sparsity=args.sparsity,
        pattern=args.pattern,
        mask_file=args.mask_file,
    )
    solver = SolverConfig.with_tol(
        args.tol,
        max_iters=args.max_iters,
        restart_policy=RestartPolicy.parse(args.restart),
        seed=args.seed,
    )
    overrides = {
        key: value
        for key, value in (
            ("damping", args.damping),
            ("batch_cols", args.batch_cols),
            ("skip_threshold", args.skip_threshold),
        )
        if value is not None
    }
    return RunConfig(
        manifest=args.model,
        calib=args.calib,
        out_dir=args.out,
        selector=selector,
        solver=solver,
        update=UpdateMode(args.update),
        solver_kind=SolverKind(args.solver),
        seq_len=args.seq_len,
        direct_max_dim=args.direct_max_dim,
        dump_hessian=args.dump_hessian,
        threads=args.threads,
        show_progress=sys.stderr.isatty(),
        **overrides,
    )


def cmd_prune(args: argparse.Namespace) -> int:
    prune_model(args.run_config)
    print_summary(load_report(args.out))
    return 0


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    manifest_path, calib_path = generate_model(
        args.out,
        layers=args.layers,
        dim=args.dim,
        rows=args.rows,
        rho=args.rho,
        seed=args.seed,
        activation=Activation(args.activation),
    )
    print(f"Manifest:    {manifest_path}")
    print(f"Calibration: {calib_path}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    outcome = run_verify(seed=args.seed, tol=args.tol, solver_tol=args.solver_tol, per_dim=args.per_dim)
    print(f"Instances: {len(outcome.deviations)}")
    print(f"Max deviation: {outcome.max_deviation:.6e} (tolerance {outcome.tol:g})")
    if outcome.passed:
        print("PASS")
        return 0
    print(f"FAIL: worst instance #{outcome.worst_index}")
    if args.out is not None:
        dump_instance(args.out, outcome)
    return 1


def cmd_report(args: argparse.Namespace) -> int:
    print_summary(load_report(args.out))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        validate_config()
        if args.command == "prune":
            args.run_config = run_config_from_args(args)
    except ConfigError as e:
        parser.error(str(e))

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else QPRUNE_LOG_LEVEL,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130
    except (QpruneError, OSError) as e:
        logger.error("Fatal error: %s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
