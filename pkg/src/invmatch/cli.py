"""Command-line interface: ``invmatch <command> [options]``.

Exit codes
----------
0  success
1  any other library error
2  invalid SCM spec, schema violation or bad arguments
3  file I/O failure
4  training data without environment variation
5  an environment has too few rows
6  experiment aborted after too many failed models
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import engine, experiments
from .data import read_csv, write_csv
from .errors import (
    ExperimentAborted,
    ImpError,
    InsufficientSamples,
    InvalidSpec,
    NoEnvironmentVariation,
    SchemaError,
    UnknownPreset,
)
from .scm import (
    GenConfig,
    derive_test_spec,
    load_spec,
    random_scm,
    require_valid,
    sample,
    save_spec,
    toy_scm,
    validate,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SCHEMA = 2
EXIT_IO = 3
EXIT_NO_VARIATION = 4
EXIT_FEW_SAMPLES = 5
EXIT_ABORTED = 6


def _say(*parts):
    print(*parts, flush=True)


def _seed(args) -> int:
    _say(f"seed: {args.seed}")
    return args.seed


def _safe_name(label) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in str(label))


def cmd_simulate(args) -> int:
    spec = require_valid(load_spec(args.spec), require_variation=not args.allow_constant)
    rng = np.random.default_rng(_seed(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    datasets = [sample(spec, u, args.n_per_env, rng) for u in spec.env_labels]
    for ds in datasets:
        path = out / f"env_{_safe_name(ds.env_label)}.csv"
        n = write_csv([ds], path)
        _say(f"{path}: {n} rows")
    pooled = out / "pooled.csv"
    n = write_csv(datasets, pooled)
    _say(f"{pooled}: {n} rows")
    return EXIT_OK


def cmd_train(args) -> int:
    table = read_csv(args.data)
    if not table.has_y:
        raise SchemaError(f"{args.data}: training data needs a 'y' column")
    model = engine.train(
        table.datasets,
        alpha_quantile=args.alpha_quantile,
        max_subset_size=args.max_subset_size,
    )
    engine.save_model(model, args.model_out)
    sel = model.selected
    _say(f"epsilon: {model.epsilon!r}")
    _say(f"selected {len(sel)} of {model.n_candidates} candidates:")
    for c in sel:
        _say(f"  {c.feature}  rss={c.train_rss:.6g}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = engine.load_model(args.model)
    table = read_csv(args.data)
    if table.d != model.d:
        raise SchemaError(f"{args.data} has {table.d} predictors, model expects {model.d}")
    pred = engine.predict(model, [ds.without_y() for ds in table.datasets])
    y_hat = table.scatter(pred)
    envs = table.env_per_row()
    lines = ["env,y_hat"] + [f"{e},{float(v)!r}" for e, v in zip(envs, y_hat)]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _say(f"{args.out}: {len(y_hat)} predictions")
    if table.has_y:
        truth = np.concatenate([ds.Y for ds in table.datasets])
        _say(f"mean RSS: {engine.evaluate_rss(pred, truth):.6g}")
    return EXIT_OK


def cmd_bench(args) -> int:
    changes = {"seed": _seed(args)}
    if args.n_models is not None:
        changes["n_models"] = args.n_models
    if args.n_per_env is not None:
        changes["n_per_env"] = args.n_per_env
    config = experiments.preset(args.preset, **changes)
    report = experiments.run_experiment(config, workers=args.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    report.write_json(out / "summary.json")
    med = report.medians()
    _say(f"preset {args.preset}: {config.n_models} models, {len(report.failures)} failed")
    for m in experiments.METHODS:
        _say(f"  median mean RSS {m}: {med[m]:.6g}")
    _say(f"  IMP beats OLS in {report.win_rate('OLS'):.1%} of models")
    return EXIT_OK


def cmd_validate(args) -> int:
    spec = load_spec(args.spec)
    bad = validate(spec, require_variation=not args.allow_constant)
    if bad:
        for v in bad:
            _say(f"{v.code}: {v.message}")
        return EXIT_SCHEMA
    _say(f"{args.spec}: valid ({spec.d} predictors, {len(spec.env_labels)} environments)")
    return EXIT_OK


def cmd_make_spec(args) -> int:
    if args.kind == "toy":
        a = args.a or [0.0, 2.0]
        spec = toy_scm({i + 1: v for i, v in enumerate(a)})
        save_spec(spec, args.out)
        _say(f"{args.out}: toy system with a = {a}")
        return EXIT_OK
    rng = np.random.default_rng(_seed(args))
    labels = args.labels or [1, 2, 3, 4, 5]
    spec = random_scm(args.d, labels, GenConfig(alpha_range=tuple(args.alpha_range)), rng)
    save_spec(spec, args.out)
    _say(f"{args.out}: random system, d={args.d}, intervened {(spec.intervened() + 1).tolist()}")
    if args.test_out:
        test_labels = args.test_labels or [5, 6, 7, 8, 9, 10]
        test = derive_test_spec(spec, test_labels, tuple(args.test_alpha_range), rng)
        save_spec(test, args.test_out)
        _say(f"{args.test_out}: test system with {len(test_labels)} environments")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invmatch", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="sample CSV datasets from an SCM spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--n-per-env", type=int, default=300)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--allow-constant", action="store_true", help="accept specs whose alpha never varies")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="fit and select invariant matching features")
    s.add_argument("--data", required=True, help="training CSV with env and y columns")
    s.add_argument("--model-out", required=True)
    s.add_argument("--alpha-quantile", type=float, default=0.05)
    s.add_argument("--max-subset-size", type=int, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict y for a test CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("bench", help="compare against pooled OLS and anchor regression")
    s.add_argument("--preset", default="A", help="A, B1 or B2")
    s.add_argument("--n-models", type=int, default=None)
    s.add_argument("--n-per-env", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=None, help="worker processes (capped by IMP_THREADS)")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("validate", help="check an SCM spec file")
    s.add_argument("--spec", required=True)
    s.add_argument("--allow-constant", action="store_true")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("make-spec", help="write a toy or random SCM spec")
    s.add_argument("kind", choices=["toy", "random"])
    s.add_argument("--out", required=True)
    s.add_argument("--a", type=float, nargs="+", help="toy: coefficient of x1 per environment")
    s.add_argument("--d", type=int, default=10)
    s.add_argument("--labels", type=int, nargs="+")
    s.add_argument("--alpha-range", type=float, nargs=2, default=[-2.0, 2.0])
    s.add_argument("--test-out")
    s.add_argument("--test-labels", type=int, nargs="+")
    s.add_argument("--test-alpha-range", type=float, nargs=2, default=[-10.0, 10.0])
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_spec)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SCHEMA if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except InvalidSpec as exc:
        for v in exc.violations:
            _say(f"{v.code}: {v.message}")
        return EXIT_SCHEMA
    except NoEnvironmentVariation as exc:
        _say(f"error: {exc}")
        return EXIT_NO_VARIATION
    except InsufficientSamples as exc:
        _say(f"error: {exc}")
        return EXIT_FEW_SAMPLES
    except ExperimentAborted as exc:
        _say(f"error: {exc}")
        return EXIT_ABORTED
    except (SchemaError, UnknownPreset) as exc:
        _say(f"error: {exc}")
        return EXIT_SCHEMA
    except OSError as exc:
        _say(f"error: {exc}")
        return EXIT_IO
    except ImpError as exc:
        _say(f"error: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
