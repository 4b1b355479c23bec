"""Command-line front end: generate | fit | eval | experiment.

File formats owned here: data is comma-separated CSV (no header unless
--header), ground truth and estimates are JSON with sorted keys so reruns
under the same seed are byte-identical.  Exit codes: 0 ok, 2 usage,
3 input error, 4 solver failure, 5 extraction failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from .completion import SdpConfig
from .errors import ExtractionError, InputError, MixmomError, SolverError
from .models import MODEL_NAMES, MixtureSpec, make_adapter, random_mixture_spec
from .pipeline import (
    FitConfig,
    em_gaussian_baseline,
    fit,
    relative_error,
    render_experiment_table,
    run_experiment,
)


def _write_json(path: str, payload: dict):
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_json(path: str) -> dict:
    try:
        with open(path) as handle:
            return json.load(handle)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def _read_csv(path: str) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"{path} is not a numeric CSV table: {exc}") from exc
    if data.size == 0:
        raise InputError(f"{path} holds no data rows")
    return data


def _adapter_options(args) -> dict:
    options = {}
    for key in ("m", "sigma2", "b_max"):
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    return options


def _cmd_generate(args) -> int:
    rng = np.random.default_rng(args.seed)
    options = _adapter_options(args)
    if args.view_noise is not None:
        options["view_noise"] = args.view_noise
    if args.spread is not None:
        options["spread"] = args.spread
    adapter = make_adapter(args.model, args.d, **_adapter_options(args))
    if args.truth_in:
        spec = MixtureSpec.from_dict(_read_json(args.truth_in))
    else:
        spec = random_mixture_spec(args.model, args.k, args.d, rng, **options)
    data = adapter.sample(spec, args.samples, rng)
    fmt = "%d" if args.model == "binomial" else "%.17g"
    header = ",".join(f"col{i + 1}" for i in range(data.shape[1])) if args.header else ""
    np.savetxt(args.out, data, delimiter=",", fmt=fmt, header=header, comments="")
    _write_json(args.truth, spec.to_dict())
    print(args.out)
    print(args.truth)
    return 0


def _cmd_fit(args) -> int:
    data = _read_csv(args.data)
    adapter = make_adapter(args.model, args.d, **_adapter_options(args))
    sdp = SdpConfig()
    if args.config:
        try:
            sdp = SdpConfig.from_dict(_read_json(args.config))
        except ValueError as exc:
            raise InputError(str(exc)) from exc
    try:
        cfg = FitConfig(
            k=args.k,
            degree=args.degree,
            solver=args.solver,
            sdp=sdp,
            seed=args.seed,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    report = fit(adapter, cfg, data=data)
    if args.verbose:
        print(
            f"path={report.path} status={report.completion_status} "
            f"certificate={report.certificate}",
            file=sys.stderr,
        )
    _write_json(args.out, report.to_dict())
    print(args.out)
    return 0


def _components_from_file(path: str):
    raw = _read_json(path)
    if "components" not in raw:
        raise InputError(f"{path} holds neither an estimate nor a mixture spec")
    return np.asarray(raw["components"], dtype=float)


def _cmd_eval(args) -> int:
    est = _components_from_file(args.estimate)
    tru = _components_from_file(args.truth)
    try:
        err = relative_error(est, tru)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    print(f"{err:.6g}")
    if args.out:
        _write_json(args.out, {"relative_error": err})
    return 0


_EXPERIMENT_KEYS = {
    "model",
    "k",
    "d",
    "sample_sizes",
    "trials",
    "methods",
    "seed",
    "fit",
}
_EXPERIMENT_REQUIRED = {"model", "k", "sample_sizes", "trials", "methods"}


def _validate_experiment_config(raw: dict) -> dict:
    unknown = set(raw) - _EXPERIMENT_KEYS
    if unknown:
        raise InputError(f"unknown experiment config keys: {sorted(unknown)}")
    missing = _EXPERIMENT_REQUIRED - set(raw)
    if missing:
        raise InputError(f"experiment config lacks keys: {sorted(missing)}")
    if raw["model"] not in MODEL_NAMES:
        raise InputError(f"unknown model {raw['model']!r}")
    if not isinstance(raw["trials"], int) or raw["trials"] < 1:
        raise InputError("trials must be a positive integer")
    sizes = raw["sample_sizes"]
    if isinstance(sizes, int):
        sizes = [sizes]
    if not isinstance(sizes, list) or not sizes or not all(
        isinstance(t, int) and t > 0 for t in sizes
    ):
        raise InputError("sample_sizes must be a positive integer or list of them")
    methods = raw["methods"]
    if not isinstance(methods, list) or not methods:
        raise InputError("methods must be a non-empty list")
    fit_cfg = raw.get("fit", {})
    if not isinstance(fit_cfg, dict):
        raise InputError("fit overrides must be an object")
    return {
        "model": raw["model"],
        "k": int(raw["k"]),
        "d": int(raw.get("d", 1)),
        "sample_sizes": sizes,
        "trials": raw["trials"],
        "methods": methods,
        "seed": int(raw.get("seed", 0)),
        "fit_options": fit_cfg,
    }


def _cmd_experiment(args) -> int:
    cfg = _validate_experiment_config(_read_json(args.config))
    if args.seed is not None:
        cfg["seed"] = args.seed
    report = run_experiment(**cfg)
    print(render_experiment_table(report))
    if args.out:
        _write_json(args.out, report)
        print(args.out)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixmom",
        description="Mixture-model estimation from moments: moment-matrix "
        "completion followed by eigenvalue extraction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="random seed")
        p.add_argument("--verbose", action="store_true", help="progress on stderr")

    gen = sub.add_parser("generate", help="sample synthetic data plus ground truth")
    common(gen)
    gen.add_argument("--model", required=True, choices=MODEL_NAMES)
    gen.add_argument("--k", type=int, required=True, help="number of components")
    gen.add_argument("--d", type=int, default=1, help="data / view dimension")
    gen.add_argument("--samples", type=int, required=True, help="rows to draw")
    gen.add_argument("--out", required=True, help="CSV output path")
    gen.add_argument("--truth", required=True, help="ground-truth JSON path")
    gen.add_argument("--truth-in", help="reuse an existing ground-truth JSON")
    gen.add_argument("--header", action="store_true", help="write a CSV header row")
    gen.add_argument("--m", type=int, help="binomial trial count (default 10)")
    gen.add_argument("--sigma2", type=float, help="regression noise variance")
    gen.add_argument("--b-max", dest="b_max", type=int, help="regression moment order")
    gen.add_argument("--view-noise", type=float, help="multiview sampling noise")
    gen.add_argument("--spread", type=float, help="gaussian noise/separation ratio")
    gen.set_defaults(func=_cmd_generate, seed=0)

    fit_p = sub.add_parser("fit", help="estimate mixture parameters from data")
    common(fit_p)
    fit_p.add_argument("--data", required=True, help="CSV data path")
    fit_p.add_argument("--model", required=True, choices=MODEL_NAMES)
    fit_p.add_argument("--k", type=int, required=True)
    fit_p.add_argument("--d", type=int, default=1)
    fit_p.add_argument("--degree", type=int, help="moment matrix degree r")
    fit_p.add_argument(
        "--solver",
        default="auto",
        choices=["auto", "linear", "sdp", "multiview-corner", "multiplication-matrix"],
    )
    fit_p.add_argument("--out", required=True, help="estimate JSON path")
    fit_p.add_argument("--config", help="solver config JSON (rho, tol_primal, ...)")
    fit_p.add_argument("--m", type=int, help="binomial trial count (default 10)")
    fit_p.add_argument("--sigma2", type=float, help="regression noise variance")
    fit_p.add_argument(
        "--b-max",
        dest="b_max",
        type=int,
        default=3,
        help="regression moment order; 3 makes K >= 2 fits determined",
    )
    fit_p.set_defaults(func=_cmd_fit, seed=0)

    ev = sub.add_parser("eval", help="relative error between estimate and truth")
    common(ev)
    ev.add_argument("--estimate", required=True, help="estimate or spec JSON")
    ev.add_argument("--truth", required=True, help="ground-truth JSON")
    ev.add_argument("--out", help="optional JSON output")
    ev.set_defaults(func=_cmd_eval)

    ex = sub.add_parser("experiment", help="run a multi-trial benchmark table")
    common(ex)
    ex.add_argument("--config", required=True, help="experiment config JSON")
    ex.add_argument("--out", help="results JSON path")
    ex.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 4
    except ExtractionError as exc:
        print(f"extraction failure: {exc}", file=sys.stderr)
        return 5
    except MixmomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
