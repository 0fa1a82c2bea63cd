"""Command-line surface: learn, verify, rollout, streamlines, eval, synth.

Exit codes are a stable contract: 0 success, 1 usage error, 2 data or
validation error, 3 learning failure, 4 certification failure. The default
seed can be overridden with the PLYDS_SEED environment variable; an optional
JSON config file supplies flag defaults, and explicit flags win over it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .data import load_demonstrations, preprocess, synth_generate
from .errors import InputError, LearningError, ParseError, PlydsError, SolverError, ValidationError
from .evaluate import ProtocolConfig, run_protocol
from .learn import LearnConfig, learn_policy
from .lyapunov import check_certificate
from .model_io import load_model, save_model
from .rollout import (
    RolloutConfig,
    export_streamlines_csv,
    export_streamlines_svg,
    export_trajectory_csv,
    integrate_rollout,
    streamline_field,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_LEARNING = 3
EXIT_CERTIFICATE = 4


class CliParser(argparse.ArgumentParser):
    """argparse that exits with the usage code instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _default_seed() -> int:
    try:
        return int(os.environ.get("PLYDS_SEED", "0"))
    except ValueError:
        return 0


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.replace(" ", "").split(",") if v])
    except ValueError as exc:
        raise InputError(f"cannot parse vector {text!r}: {exc}") from exc


def _parse_bbox(text: str, n: int = 2):
    values = _parse_vector(text)
    if values.shape[0] != 2 * n:
        raise InputError(f"bbox needs {2 * n} numbers (min,max per axis), got {values.shape[0]}")
    lo = values[0::2]
    hi = values[1::2]
    return lo, hi


def _apply_config_file(args: argparse.Namespace, defaults: dict) -> dict:
    """Resolve option values: explicit flags beat the config file overlay,
    which beats the built-in defaults."""
    overlay = {}
    if getattr(args, "config", None):
        try:
            overlay = json.loads(open(args.config).read())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read config file: {exc}", path=args.config) from exc
        unknown = set(overlay) - set(defaults)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in overlay:
            resolved[key] = overlay[key]
        else:
            resolved[key] = default
    return resolved


def _learn_defaults() -> dict:
    return {
        "alpha": 3, "beta": 1, "tol": 1e-6, "l1": 1e-4, "l2": 1e-4,
        "lpf_mode": "vector", "basis": "elementwise", "seed": _default_seed(),
        "max_alternations": 8, "sqp_iters": 2, "solver": "auto",
        "normalize_velocities": False, "lenient": False,
    }


def _make_learn_config(resolved: dict) -> LearnConfig:
    return LearnConfig(
        alpha=int(resolved["alpha"]), beta=int(resolved["beta"]),
        l1=float(resolved["l1"]), l2=float(resolved["l2"]),
        tolerance=float(resolved["tol"]),
        max_alternations=int(resolved["max_alternations"]),
        basis_mode=resolved["basis"], lpf_mode=resolved["lpf_mode"],
        seed=int(resolved["seed"]), sqp_iters=int(resolved["sqp_iters"]),
        solver_backend=resolved["solver"])


def cmd_learn(args) -> int:
    resolved = _apply_config_file(args, _learn_defaults())
    config = _make_learn_config(resolved)
    dataset = load_demonstrations(args.data, lenient=bool(resolved["lenient"]))
    dataset = preprocess(dataset, normalize_velocities=bool(resolved["normalize_velocities"]))
    policy, lyap, cert, report = learn_policy(dataset, config)
    metrics = {"train_mse": report["train_mse"], "objective": report["objective"],
               "alternations": report["alternations"],
               "sqp_accepted": report["sqp_accepted"], "seconds": report["seconds"]}
    echo = dict(config.to_dict(), normalize_velocities=bool(resolved["normalize_velocities"]),
                data=str(args.data))
    save_model(args.out, policy, lyap, cert, config=echo, metrics=metrics)
    print(f"certified model -> {args.out} "
          f"(train MSE {report['train_mse']:.3e}, {report['seconds']:.1f}s)")
    return EXIT_OK


def cmd_verify(args) -> int:
    policy, lyap, cert, _ = load_model(args.model)
    fresh = check_certificate(policy, lyap, cert, seed=_default_seed() + 1)
    print(json.dumps(fresh.to_report(), indent=2))
    return EXIT_OK if fresh.certified else EXIT_CERTIFICATE


def _rollout_config(args, policy, cert) -> RolloutConfig:
    lo = np.asarray(cert.audit_box[0])
    hi = np.asarray(cert.audit_box[1])
    workspace_span = float(np.max(hi - lo)) / 2.0  # audit box is 2x workspace
    radius = args.radius if args.radius is not None else 1e-2 * workspace_span
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    box = (center - 2.0 * half, center + 2.0 * half)  # 4x workspace
    return RolloutConfig(dt=args.dt, max_steps=args.max_steps,
                         convergence_radius=radius, box=(tuple(box[0]), tuple(box[1])))


def cmd_rollout(args) -> int:
    policy, lyap, cert, meta = load_model(args.model)
    x0 = _parse_vector(args.x0)
    if x0.shape[0] != policy.n:
        raise InputError(f"start point has dimension {x0.shape[0]}, model expects {policy.n}")
    config = _rollout_config(args, policy, cert)
    trajectory = integrate_rollout(policy, x0, config)
    export_trajectory_csv(trajectory, args.out,
                          meta={"model": str(args.model), "status": trajectory.status,
                                "dt": config.dt, "config": meta.get("config", {})})
    print(f"{trajectory.status} after {trajectory.steps} steps -> {args.out}")
    return EXIT_OK


def cmd_streamlines(args) -> int:
    policy, lyap, cert, meta = load_model(args.model)
    if args.bbox:
        bbox = _parse_bbox(args.bbox, policy.n)
    else:
        bbox = (np.asarray(cert.audit_box[0]), np.asarray(cert.audit_box[1]))
    config = _rollout_config(args, policy, cert)
    trajectories, seeds, field = streamline_field(policy, bbox, args.res, config)
    demos = None
    if args.overlay:
        overlay = load_demonstrations(args.overlay)
        demos = [overlay.positions[d] for d in range(overlay.n_demos)]
    provenance = {"model": str(args.model), "resolution": args.res,
                  "config": meta.get("config", {})}
    if args.csv:
        export_streamlines_csv(trajectories, args.csv, meta=provenance)
    if args.svg:
        export_streamlines_svg(trajectories, seeds, field, bbox, args.svg,
                               demonstrations=demos, meta=provenance)
    converged = sum(1 for t in trajectories if t.status == "converged")
    print(f"{converged}/{len(trajectories)} streamlines converged")
    return EXIT_OK


def cmd_eval(args) -> int:
    resolved = _apply_config_file(args, dict(_learn_defaults(), test_fraction=2.0 / 7.0))
    dataset = load_demonstrations(args.data, lenient=bool(resolved["lenient"]))
    protocol = ProtocolConfig(learn=_make_learn_config(resolved),
                              test_fraction=float(resolved["test_fraction"]),
                              normalize_velocities=bool(resolved["normalize_velocities"]))
    report = run_protocol(dataset, protocol, args.seeds)
    report.save_csv(args.out)
    if args.summary:
        report.save_summary(args.summary)
    if report.train_test_overlap:
        print("note: single demonstration; train and test splits overlap")
    print(f"MSE {report.mean_mse:.3e} +/- {report.std_mse:.3e} over "
          f"{len(report.rows)} seeds, certification rate "
          f"{report.certification_rate:.0%} -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import save_demonstrations
    dataset = synth_generate(args.kind, n=args.n, n_demos=args.demos,
                             n_samples=args.samples,
                             seed=args.seed if args.seed is not None else _default_seed(),
                             radius=args.radius)
    save_demonstrations(dataset, args.out)
    print(f"{dataset.n_demos} x {dataset.n_samples} {args.kind} demonstrations -> {args.out}")
    return EXIT_OK


def build_parser() -> CliParser:
    parser = CliParser(prog="plyds",
                       description="Learn, certify, and roll out globally stable "
                                   "polynomial dynamical-system policies.")
    parser.add_argument("--version", action="version", version=f"plyds {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    learn = sub.add_parser("learn", help="learn a certified policy from a dataset")
    learn.add_argument("--data", required=True, help="dataset directory")
    learn.add_argument("--out", required=True, help="output model JSON")
    learn.add_argument("--alpha", type=int)
    learn.add_argument("--beta", type=int)
    learn.add_argument("--tol", type=float)
    learn.add_argument("--l1", type=float)
    learn.add_argument("--l2", type=float)
    learn.add_argument("--lpf-mode", dest="lpf_mode", choices=("vector", "scalar"))
    learn.add_argument("--basis", choices=("elementwise", "full"))
    learn.add_argument("--seed", type=int)
    learn.add_argument("--max-alternations", dest="max_alternations", type=int)
    learn.add_argument("--sqp-iters", dest="sqp_iters", type=int)
    learn.add_argument("--solver", choices=("auto", "cvxpy", "reference"))
    learn.add_argument("--normalize-velocities", dest="normalize_velocities",
                       action="store_const", const=True)
    learn.add_argument("--lenient", action="store_const", const=True)
    learn.add_argument("--config", help="JSON file with flag defaults")
    learn.set_defaults(func=cmd_learn)

    verify = sub.add_parser("verify", help="re-verify a model's certificate")
    verify.add_argument("model")
    verify.set_defaults(func=cmd_verify)

    rollout = sub.add_parser("rollout", help="integrate one rollout to CSV")
    rollout.add_argument("model")
    rollout.add_argument("--x0", required=True, help="start point, comma separated")
    rollout.add_argument("--dt", type=float, default=1e-2)
    rollout.add_argument("--max-steps", dest="max_steps", type=int, default=100_000)
    rollout.add_argument("--radius", type=float, default=None)
    rollout.add_argument("--out", required=True)
    rollout.set_defaults(func=cmd_rollout)

    stream = sub.add_parser("streamlines", help="grid rollouts to CSV and SVG")
    stream.add_argument("model")
    stream.add_argument("--bbox", help="x1min,x1max,x2min,x2max (default: audit box)")
    stream.add_argument("--res", type=int, default=10)
    stream.add_argument("--dt", type=float, default=1e-2)
    stream.add_argument("--max-steps", dest="max_steps", type=int, default=100_000)
    stream.add_argument("--radius", type=float, default=None)
    stream.add_argument("--svg")
    stream.add_argument("--csv")
    stream.add_argument("--overlay", help="dataset directory to overlay")
    stream.set_defaults(func=cmd_streamlines)

    evaluate = sub.add_parser("eval", help="multi-seed evaluation protocol")
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--seeds", type=int, default=20)
    evaluate.add_argument("--out", required=True, help="per-seed CSV report")
    evaluate.add_argument("--summary", help="JSON summary path")
    evaluate.add_argument("--alpha", type=int)
    evaluate.add_argument("--beta", type=int)
    evaluate.add_argument("--tol", type=float)
    evaluate.add_argument("--l1", type=float)
    evaluate.add_argument("--l2", type=float)
    evaluate.add_argument("--lpf-mode", dest="lpf_mode", choices=("vector", "scalar"))
    evaluate.add_argument("--basis", choices=("elementwise", "full"))
    evaluate.add_argument("--seed", type=int)
    evaluate.add_argument("--max-alternations", dest="max_alternations", type=int)
    evaluate.add_argument("--sqp-iters", dest="sqp_iters", type=int)
    evaluate.add_argument("--solver", choices=("auto", "cvxpy", "reference"))
    evaluate.add_argument("--test-fraction", dest="test_fraction", type=float)
    evaluate.add_argument("--normalize-velocities", dest="normalize_velocities",
                          action="store_const", const=True)
    evaluate.add_argument("--lenient", action="store_const", const=True)
    evaluate.add_argument("--config", help="JSON file with flag defaults")
    evaluate.set_defaults(func=cmd_eval)

    synth = sub.add_parser("synth", help="generate a synthetic oracle dataset")
    synth.add_argument("--kind", required=True, choices=("linear", "sine", "cubic"))
    synth.add_argument("--out", required=True)
    synth.add_argument("--n", type=int, default=2)
    synth.add_argument("--demos", type=int, default=7)
    synth.add_argument("--samples", type=int, default=200)
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--radius", type=float, default=10.0)
    synth.set_defaults(func=cmd_synth)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        print(f"plyds: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InputError as exc:
        print(f"plyds: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LearningError, SolverError) as exc:
        print(f"plyds: learning failed: {exc}", file=sys.stderr)
        return EXIT_LEARNING
    except ArithmeticError as exc:
        print(f"plyds: numerical error: {exc}", file=sys.stderr)
        return EXIT_LEARNING
    except PlydsError as exc:
        print(f"plyds: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    raise SystemExit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
