"""Command-line front end: classify / scan / dominate / optimize / verify.

Every command prints a JSON report embedding the tool version, the resolved
configuration and its hash, the seed, and the tolerances in force, so runs
are reproducible byte for byte.  Exit codes: 0 success, 1 usage or config
error, 2 the theory is silent (inconclusive classification or violated
assumptions), 3 a solver failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .complete_class import Inconclusive, classify_model
from .designs import Design
from .dominance import reduce_design, verify_dominance
from .errors import CCDesignError, NumericalFailure
from .kernel import backend_name
from .models import ModelSpec, builtin, from_config, map_interval, BUILTIN_CONFIGS
from .optimize import Criterion, brute_force_reference, optimize
from .reduction import region_scan

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INCONCLUSIVE = 2
EXIT_NUMERICAL = 3

TOLERANCES = {
    "jet_div_zero": 1e-12,
    "loewner_eig": 1e-9,
    "moment_residual": 1e-9,
    "diag_root": 1e-10,
    "definiteness_eig": 1e-9,
    "sensitivity": 1e-3,
}


def _parse_theta(text: str) -> dict[str, float]:
    theta = {}
    if not text:
        return theta
    for item in text.split(","):
        name, _, value = item.partition("=")
        if not _ or not name.strip():
            raise ValueError(f"bad theta entry {item!r}; expected name=value")
        theta[name.strip()] = float(value)
    return theta


def _load_model(selector: str) -> ModelSpec:
    if selector in BUILTIN_CONFIGS:
        return builtin(selector)
    path = Path(selector)
    if not path.is_file():
        raise CCDesignError(
            f"model {selector!r} is neither a builtin ({sorted(BUILTIN_CONFIGS)}) nor a config file"
        )
    return from_config(json.loads(path.read_text()))


def _load_design(path: str, space: str, model: ModelSpec, theta, x_range) -> Design:
    text = Path(path).read_text()
    if path.endswith(".json"):
        design = Design.from_json(text)
        raw_pts = np.asarray(design.points)
        weights = design.weights
    else:
        parsed = Design.from_csv(text)
        raw_pts = np.asarray(parsed.points)
        weights = parsed.weights
    interval, _ = map_interval(model, x_range, theta)
    if space == "x":
        pts = model.x_to_c(raw_pts, theta)
    else:
        pts = raw_pts
    return Design(pts, weights, interval)


def _design_to_x_csv(design: Design, model: ModelSpec, theta, x_range) -> str:
    xs = model.c_to_x(design.points_array(), theta)
    order = np.argsort(xs)
    pairs = list(zip(np.asarray(xs)[order], np.asarray(design.weights)[order]))
    lines = [f"# interval: {x_range[0]!r} {x_range[1]!r}", "x,weight"]
    lines += [f"{float(x)!r},{float(w)!r}" for x, w in pairs]
    return "\n".join(lines) + "\n"


def _atomic_write(path: str, data: str) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(target.parent), prefix=".ccd-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, str(target))
    except BaseException:
        os.unlink(tmp)
        raise


def _emit(command: str, config: dict, result: dict, out: str | None) -> None:
    canonical = json.dumps(config, sort_keys=True)
    report = {
        "tool": "ccd",
        "version": __version__,
        "backend": backend_name(),
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": config.get("seed"),
        "tolerances": TOLERANCES,
        "result": result,
    }
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    sys.stdout.write(text)
    if out:
        _atomic_write(out, text)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--model", required=True, help="builtin name or model config JSON path")
    sub.add_argument("--theta", required=True, help="comma list name=value")
    sub.add_argument("--x", nargs=2, type=float, required=True, metavar=("U", "V"),
                     help="design range for the regression variable")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--grid-size", type=int, default=512)
    sub.add_argument("--out", help="also write the JSON report here (atomic)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccd",
        description="Complete-class classification, dominance and optimal design "
                    "for nonlinear regression models.",
    )
    parser.add_argument("--version", action="version", version=f"ccd {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("classify", help="complete-class descriptor for a model/theta/range")
    _add_common(p)

    p = subs.add_parser("scan", help="bracket the classification threshold along a parameter path")
    _add_common(p)
    p.add_argument("--path", required=True, help="'ratio' or a parameter name")
    p.add_argument("--range", nargs=2, type=float, required=True, metavar=("LO", "HI"))
    p.add_argument("--resolution", type=float, default=0.005)

    p = subs.add_parser("dominate", help="reduce a design file to a class member that dominates it")
    _add_common(p)
    p.add_argument("--design", required=True, help="design file (.csv or .json)")
    p.add_argument("--space", choices=("c", "x"), default="c",
                   help="coordinate space of the design file")
    p.add_argument("--csv-out", help="prefix for <prefix>.c.csv and <prefix>.x.csv exports")

    p = subs.add_parser("optimize", help="best design restricted to the complete class")
    _add_common(p)
    p.add_argument("--criterion", default="D", help="D | A | E | PhiP:<p> | c:<v1,v2,...>")
    p.add_argument("--starts", type=int, default=16)
    p.add_argument("--reference-grid", type=int, default=0,
                   help="if > 0, also run the unrestricted grid reference with this many nodes")
    p.add_argument("--csv-out", help="prefix for <prefix>.c.csv and <prefix>.x.csv exports")

    p = subs.add_parser("verify", help="check dominance between two design files")
    _add_common(p)
    p.add_argument("--design", required=True)
    p.add_argument("--design-b", required=True)
    p.add_argument("--space", choices=("c", "x"), default="c")

    return parser


def _config_dict(args: argparse.Namespace) -> dict:
    cfg = {k.replace("_", "-"): v for k, v in vars(args).items() if k != "command" and v is not None}
    return cfg


def _run(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    theta = _parse_theta(args.theta)
    x_range = (args.x[0], args.x[1])
    config = _config_dict(args)

    if args.command == "classify":
        result = classify_model(model, theta, x_range, grid_size=args.grid_size, seed=args.seed)
        body = {
            "route": result.route,
            "scan": None if result.report is None else result.report.to_json_obj(),
            "descriptor": result.outcome.to_json_obj(),
        }
        _emit("classify", config, body, args.out)
        return EXIT_INCONCLUSIVE if isinstance(result.outcome, Inconclusive) else EXIT_OK

    if args.command == "scan":
        report = region_scan(
            model, x_range, args.path, tuple(args.range),
            resolution=args.resolution, theta_base=theta, grid_size=args.grid_size,
        )
        _emit("scan", config, report.to_json_obj(), args.out)
        return EXIT_OK

    if args.command == "dominate":
        cls = classify_model(model, theta, x_range, grid_size=args.grid_size, seed=args.seed)
        if isinstance(cls.outcome, Inconclusive):
            _emit("dominate", config, cls.outcome.to_json_obj(), args.out)
            return EXIT_INCONCLUSIVE
        design = _load_design(args.design, args.space, model, theta, x_range)
        cert = reduce_design(model, theta, design, cls.descriptor, seed=args.seed)
        body = {"descriptor": cls.descriptor.to_json_obj(), "certificate": cert.to_json_obj()}
        _emit("dominate", config, body, args.out)
        if args.csv_out:
            _atomic_write(args.csv_out + ".c.csv", cert.dominating.to_csv())
            _atomic_write(args.csv_out + ".x.csv",
                          _design_to_x_csv(cert.dominating, model, theta, x_range))
        return EXIT_OK

    if args.command == "optimize":
        cls = classify_model(model, theta, x_range, grid_size=args.grid_size, seed=args.seed)
        if isinstance(cls.outcome, Inconclusive):
            _emit("optimize", config, cls.outcome.to_json_obj(), args.out)
            return EXIT_INCONCLUSIVE
        criterion = Criterion.parse(args.criterion)
        result = optimize(model, theta, cls.descriptor, criterion,
                          starts=args.starts, seed=args.seed,
                          workers=_thread_cap())
        body = {"descriptor": cls.descriptor.to_json_obj(), "optimum": result.to_json_obj()}
        if args.reference_grid:
            ref = brute_force_reference(model, theta, criterion, cls.descriptor.interval,
                                        grid_size=args.reference_grid,
                                        support_cap=cls.descriptor.max_support)
            body["reference"] = ref.to_json_obj()
        _emit("optimize", config, body, args.out)
        if args.csv_out:
            _atomic_write(args.csv_out + ".c.csv", result.design.to_csv())
            _atomic_write(args.csv_out + ".x.csv",
                          _design_to_x_csv(result.design, model, theta, x_range))
        return EXIT_OK

    if args.command == "verify":
        xi = _load_design(args.design, args.space, model, theta, x_range)
        xi_b = _load_design(args.design_b, args.space, model, theta, x_range)
        verdict = verify_dominance(model, theta, xi, xi_b)
        _emit("verify", config, verdict.to_json_obj(), args.out)
        return EXIT_OK

    raise AssertionError(f"unhandled command {args.command}")


def _thread_cap() -> int:
    raw = os.environ.get("CCD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    try:
        return _run(args)
    except NumericalFailure as e:
        sys.stderr.write(f"numerical failure: {e}\n")
        return EXIT_NUMERICAL
    except (CCDesignError, ValueError, OSError, json.JSONDecodeError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
