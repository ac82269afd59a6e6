"""Command-line entry point: ``ellmix {sample,fit,fit-mixture,density,experiment}``.

Exit codes: 0 success, 2 usage, 3 data/parse/IO, 4 numeric or degenerate
input, 5 EM stopped on a collapsed component.
"""
from __future__ import annotations

import argparse
import shlex
import sys

import numpy as np

from . import io as eio
from .errors import (ComponentCollapse, DataFormatError, DegenerateCloudError, DomainError,
                     EllmixError, IllConditionedShapeError, InitDegenerateError, NumericError,
                     SamplerStallError)
from .estimators import FitConfig, fit_backfit, fit_direct
from .experiments import STUDIES, run_experiment
from .mixture import EmConfig, fit_em, match_components
from .model import MixtureParams, component_log_densities, mahalanobis
from .sampler import make_rng, sample_mixture

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_COLLAPSE = 0, 2, 3, 4, 5
U64_MAX = 2**64 - 1


class UsageError(Exception):
    pass


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be in [0, 2**64 - 1]")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _int_list(text):
    try:
        vals = [int(float(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("n-grid entries must be positive")
    return vals


def _global_flags(p, suppress):
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--seed", type=_u64, help="RNG seed (unsigned 64-bit, default 0)", **kw)
    p.add_argument("--out", help="output path ('-' = stdout where allowed); a directory for 'experiment'", **kw)
    p.add_argument("--format", choices=("csv", "ply"),
                   help="point file format; for reading, defaults to the file extension", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ellmix", description="Ellipsoidal shell densities: sampling, fitting, EM.")
    _global_flags(parser, suppress=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("sample", parents=[common], help="draw points from a model file")
    p.add_argument("model", help="model JSON file")
    p.add_argument("-n", "--n", type=int, required=True, help="number of points")
    p.add_argument("--no-labels", action="store_true", help="omit the label column for K > 1")

    p = sub.add_parser("fit", parents=[common], help="fit a single ellipsoid")
    p.add_argument("points", help="CSV or ASCII PLY point file")
    p.add_argument("--method", choices=("direct", "backfit"), default="backfit")
    p.add_argument("--report", help="write a JSON fit report here")
    p.add_argument("--max-iters", type=_positive_int, default=FitConfig.max_backfit_iters)
    p.add_argument("--tol", type=float, default=FitConfig.param_tol)
    p.add_argument("--correct-bias", action="store_true",
                   help="rescale the shape estimate by J_{d-1}/J_{d+1}")

    p = sub.add_parser("fit-mixture", parents=[common], help="fit a K-component mixture by EM")
    p.add_argument("points")
    p.add_argument("-K", "--components", dest="K", type=_positive_int, required=True)
    p.add_argument("--report", help="write the EM report (JSON) here")
    p.add_argument("--max-em-iters", type=_positive_int, default=EmConfig.max_em_iters)
    p.add_argument("--ll-tol", type=float, default=EmConfig.ll_rel_tol)
    p.add_argument("--restarts", type=_positive_int, default=EmConfig.kmeans_restarts)
    p.add_argument("--ridge", type=float, default=EmConfig.ridge)
    p.add_argument("--min-mass", type=float, default=None, help="collapse threshold (default d + 1)")
    p.add_argument("--literal-xi-mean", action="store_true",
                   help="measure the xi spread about the unweighted mean over all points")
    p.add_argument("--no-guard", action="store_true",
                   help="accept every M-step update even when it lowers the likelihood")
    p.add_argument("--truth", help="reference model; matched centre errors go into the report")

    p = sub.add_parser("density", parents=[common], help="per-point Mahalanobis distances and log-densities")
    p.add_argument("model")
    p.add_argument("points")
    p.add_argument("--mode", choices=("exact", "approx"), default="approx",
                   help="normalising constant (approx is the one EM uses)")

    p = sub.add_parser("experiment", parents=[common], help="run a simulation study")
    p.add_argument("name", choices=STUDIES)
    p.add_argument("--replicates", type=_positive_int)
    p.add_argument("--n-grid", type=_int_list, help="comma-separated sample sizes")
    p.add_argument("--dim", type=int, choices=(2, 3), default=3, help="dimension for 'single'")
    p.add_argument("--tilted", action="store_true", help="non-diagonal shape for the d=2 'single' study")
    return parser


def _command_string(argv):
    return "ellmix " + shlex.join(argv)


def _require_out(args, what):
    if args.out is None:
        raise UsageError(f"--out is required for {what}")
    return args.out


def _cmd_sample(args, argv):
    if args.n < 1:
        raise UsageError(f"-n must be >= 1, got {args.n}")
    mix, _ = eio.read_model(args.model)
    cloud, labels = sample_mixture(mix, args.n, make_rng(args.seed))
    keep_labels = mix.n_components > 1 and not args.no_labels
    eio.write_points(args.out or "-", cloud.points, labels if keep_labels else None, args.format or "csv")
    return EXIT_OK


def _cmd_fit(args, argv):
    out = _require_out(args, "fit")
    cloud = eio.read_points(args.points, args.format)
    config = FitConfig(max_backfit_iters=args.max_iters, param_tol=args.tol, correct_bias=args.correct_bias)
    if args.method == "direct":
        est = fit_direct(cloud, config=config)
        report = {"method": "direct", "iterations": 0, "final_param_delta": None, "converged": True,
                  "delta_trace": [], "estimate": {"mu": est.mu.tolist(), "sigma_mat": est.sigma_mat.tolist(),
                                                  "noise_sigma": est.noise_sigma}}
    else:
        est, rep = fit_backfit(cloud, config=config)
        report = {"method": "backfit", **rep.to_dict()}
    report["n"] = cloud.n
    report["validity"] = est.validity
    mix = MixtureParams((est,), [1.0])
    eio.write_model(out, mix, seed=args.seed, command=_command_string(argv))
    if args.report:
        eio.dump_json(report, args.report)
    return EXIT_OK


def _cmd_fit_mixture(args, argv):
    out = _require_out(args, "fit-mixture")
    cloud = eio.read_points(args.points, args.format)
    truth = eio.read_model(args.truth)[0] if args.truth else None
    if truth is not None and truth.dim != cloud.dim:
        raise DataFormatError(f"truth model has dim={truth.dim}, points have dim={cloud.dim}", path=args.truth)
    config = EmConfig(K=args.K, max_em_iters=args.max_em_iters, ll_rel_tol=args.ll_tol,
                      min_responsibility_mass=args.min_mass, ridge=args.ridge,
                      kmeans_restarts=args.restarts, seed=args.seed,
                      literal_xi_mean=args.literal_xi_mean, monotone_guard=not args.no_guard)
    mix, rep = fit_em(cloud, config)
    report = rep.to_dict()
    report["K"] = args.K
    report["n"] = cloud.n
    if truth is not None:
        est_c = np.array([c.mu for c in mix.components])
        true_c = np.array([c.mu for c in truth.components])
        if est_c.shape[0] == true_c.shape[0]:
            perm = match_components(est_c, true_c)
            report["matching"] = {
                "perm": perm.tolist(),
                "center_errors": np.linalg.norm(est_c[perm] - true_c, axis=1).tolist(),
                "weight_errors": np.abs(mix.weights[perm] - truth.weights).tolist(),
            }
        else:
            report["matching"] = None
    eio.write_model(out, mix, seed=args.seed, command=_command_string(argv))
    if args.report:
        eio.dump_json(report, args.report)
    if rep.termination == "component_collapse":
        print(f"ellmix: EM stopped: component {rep.collapsed_component} collapsed; "
              "wrote the last valid mixture", file=sys.stderr)
        return EXIT_COLLAPSE
    return EXIT_OK


def _cmd_density(args, argv):
    mix, _ = eio.read_model(args.model)
    cloud = eio.read_points(args.points, args.format)
    if cloud.dim != mix.dim:
        raise DataFormatError(f"dimension mismatch: model has dim={mix.dim}, points have dim={cloud.dim}",
                              path=args.points)
    x = cloud.points
    k = mix.n_components
    dm = np.column_stack([mahalanobis(x, c) for c in mix.components])
    logw = np.log(mix.weights)
    joint = component_log_densities(x, mix, args.mode)
    logf = joint - logw
    top = joint.max(axis=1, keepdims=True)
    mixture = (top + np.log(np.exp(joint - top).sum(axis=1, keepdims=True)))[:, 0]
    header = ["index"] + [f"dm_{j}" for j in range(k)] + [f"logf_{j}" for j in range(k)] + ["mixture"]
    lines = [",".join(header)]
    for i in range(x.shape[0]):
        cells = [str(i)] + [repr(float(v)) for v in dm[i]] + [repr(float(v)) for v in logf[i]]
        cells.append(repr(float(mixture[i])))
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def _cmd_experiment(args, argv):
    res = run_experiment(args.name, args.out or "results", replicates=args.replicates,
                         n_grid=args.n_grid, seed=args.seed, dim=args.dim, tilted=args.tilted)
    for path in res.paths.values():
        print(path)
    return EXIT_OK


_COMMANDS = {
    "sample": _cmd_sample,
    "fit": _cmd_fit,
    "fit-mixture": _cmd_fit_mixture,
    "density": _cmd_density,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for name, default in (("seed", 0), ("out", None), ("format", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        return _COMMANDS[args.command](args, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ellmix {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, OSError) as exc:
        print(f"ellmix: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ComponentCollapse as exc:
        print(f"ellmix: {exc}", file=sys.stderr)
        return EXIT_COLLAPSE
    except (DegenerateCloudError, IllConditionedShapeError, InitDegenerateError, NumericError,
            SamplerStallError, DomainError, FloatingPointError) as exc:
        print(f"ellmix: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EllmixError as exc:
        print(f"ellmix: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
