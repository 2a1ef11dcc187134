"""Command-line pipeline: toy, fit-mog, train, score, eval, grid.

Every command takes flat ``--key value`` flags, optionally seeded from a
``key = value`` config file (flags win), and writes a JSON manifest next to
its primary output recording the resolved configuration, input hashes, seed
and artifact paths. Exit codes: 0 success, 1 computational failure
(divergence, non-positive-definite covariance), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace

import numpy as np

from . import detectors, metrics
from .featurestore import (
    load_feature_set,
    normalize_features,
    normalize_rows,
    save_feature_set,
)
from .mog import (
    NotPositiveDefiniteError,
    fit_mog,
    gaussian_energy,
    load_mixture,
    mahalanobis_ood_score,
    save_mixture,
)
from .sgld import SgldDivergenceError, SgldSchedule
from .tensorio import load_tensor, write_tensor
from .toy import GridEvaluationError, ToySpec, energy_grid, gen_toy, save_grid_csv, \
    save_grid_tensor
from .trainer import (
    TrainingDivergedError,
    correction_defaults,
    ebm_defaults,
    load_model,
    save_correction,
    save_ebm,
    train_correction,
    train_ebm,
)

SCHEMA = 1

FEATURE_DETECTORS = ("correction", "ebm", "mahalanobis", "knn")
LOGIT_DETECTORS = ("msp", "odin", "energy-logits")


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(primary_out, command: str, config: dict, inputs: list,
                    artifacts: list, seed, started: float) -> None:
    manifest = {
        "schema": SCHEMA,
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "artifacts": [str(a) for a in artifacts],
        "started": started,
        "finished": time.time(),
    }
    with open(f"{primary_out}.manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _load_config_file(path) -> dict:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = val
    return values


def _apply_config_file(parser: argparse.ArgumentParser, argv: list) -> list:
    """Pre-scan for --config and install its values as parser defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return argv
    raw = _load_config_file(known.config)
    defaults = {}
    for action in parser._actions:
        if action.dest in raw:
            value = raw[action.dest]
            if action.nargs in (2, 4):
                parsed = [action.type(v) for v in value.split()]
                if len(parsed) != action.nargs:
                    raise UsageError(f"config key {action.dest} needs {action.nargs} values")
                defaults[action.dest] = parsed
            elif isinstance(value, str) and action.const is True:  # store_true flag
                defaults[action.dest] = value.lower() in ("1", "true", "yes")
            elif action.type is not None:
                defaults[action.dest] = action.type(value)
            else:
                defaults[action.dest] = value
    parser.set_defaults(**defaults)
    return argv


def cmd_toy(args) -> int:
    started = time.time()
    spec = ToySpec(
        kind=args.kind.replace("-", "_"),
        samples_per_class=args.samples_per_class,
        arm_length=args.arm_length,
        arm_thickness=args.thickness,
        grid_pitch=args.pitch,
        seed=args.seed,
    )
    fs = gen_toy(spec)
    save_feature_set(fs, args.out_features, args.out_labels)
    _write_manifest(
        args.out_features, "toy",
        {"kind": spec.kind, "samples_per_class": spec.samples_per_class,
         "arm_length": spec.arm_length, "thickness": spec.arm_thickness,
         "pitch": spec.grid_pitch, "out_features": str(args.out_features),
         "out_labels": str(args.out_labels)},
        [], [args.out_features, args.out_labels], args.seed, started,
    )
    return 0


def cmd_fit_mog(args) -> int:
    started = time.time()
    fs = load_feature_set(args.features, args.labels, args.num_classes)
    if args.normalize:
        fs = normalize_features(fs)
    gm = fit_mog(fs, shrinkage=args.shrinkage, temperature=args.temperature)
    save_mixture(args.out, gm)
    _write_manifest(
        args.out, "fit-mog",
        {"features": str(args.features), "labels": str(args.labels),
         "shrinkage": args.shrinkage, "temperature": args.temperature,
         "normalize": bool(args.normalize), "num_classes": args.num_classes,
         "out": str(args.out)},
        [args.features, args.labels], [args.out], args.seed, started,
    )
    return 0


def _train_config(args):
    toy = args.preset == "toy"
    cfg = ebm_defaults(toy=toy, seed=args.seed) if args.ebm \
        else correction_defaults(toy=toy, seed=args.seed)
    overrides = {}
    for key in ("epochs", "batch_size", "learning_rate", "l2_coeff",
                "input_noise_std", "hidden_dim", "num_hidden",
                "net_temperature", "activation"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    sgld_kw = {}
    if args.sgld_steps is not None:
        sgld_kw["steps"] = args.sgld_steps
    if args.sgld_step_size is not None:
        sgld_kw["step_size"] = tuple(args.sgld_step_size)
    if args.sgld_noise is not None:
        sgld_kw["noise_scale"] = tuple(args.sgld_noise)
    if sgld_kw:
        base = cfg.sgld
        overrides["sgld"] = SgldSchedule(
            sgld_kw.get("steps", base.steps),
            sgld_kw.get("step_size", base.step_size),
            sgld_kw.get("noise_scale", base.noise_scale),
        )
    return replace(cfg, **overrides) if overrides else cfg


def cmd_train(args) -> int:
    started = time.time()
    if args.ebm and args.mog is not None:
        raise UsageError("--ebm and --mog are mutually exclusive")
    if not args.ebm and args.mog is None:
        raise UsageError("training the correction model requires --mog (or pass --ebm)")
    fs = load_feature_set(args.features, args.labels)
    if args.normalize:
        fs = normalize_features(fs)
    cfg = _train_config(args)
    inputs = [args.features, args.labels]
    if args.ebm:
        net, _ = train_ebm(fs, cfg, log_path=args.log)
        save_ebm(args.out, net, cfg.net_temperature)
    else:
        gm = load_mixture(args.mog)
        inputs.append(args.mog)
        model, _ = train_correction(fs, gm, cfg, log_path=args.log)
        save_correction(args.out, model)
    config = {
        "features": str(args.features), "labels": str(args.labels),
        "mog": None if args.mog is None else str(args.mog),
        "ebm": bool(args.ebm), "normalize": bool(args.normalize),
        "preset": args.preset, "out": str(args.out),
        "log": None if args.log is None else str(args.log),
        "epochs": cfg.epochs, "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate, "l2_coeff": cfg.l2_coeff,
        "input_noise_std": cfg.input_noise_std,
        "sgld_steps": cfg.sgld.steps,
        "sgld_step_size": list(cfg.sgld.step_size),
        "sgld_noise": list(cfg.sgld.noise_scale),
        "hidden_dim": cfg.hidden_dim, "num_hidden": cfg.num_hidden,
        "net_temperature": cfg.net_temperature, "activation": cfg.activation,
    }
    artifacts = [args.out] + ([args.log] if args.log else [])
    _write_manifest(args.out, "train", config, inputs, artifacts, cfg.seed, started)
    return 0


def _score_features(args) -> np.ndarray:
    feats = load_tensor(args.features)
    if feats.ndim != 2 or feats.dtype != np.float32:
        raise UsageError(f"{args.features}: features file must be a rank-2 f32 tensor")
    x = feats.astype(np.float64)
    if args.normalize:
        x = normalize_rows(x)
    if args.detector == "knn":
        if args.train_features is None:
            raise UsageError("knn needs --train-features")
        if args.k is None:
            raise UsageError("knn needs --k")
        train = load_tensor(args.train_features).astype(np.float64)
        if args.normalize:
            train = normalize_rows(train)
        return detectors.score_knn(train, x, args.k)
    if args.model is None:
        raise UsageError(f"detector {args.detector} needs --model")
    if args.detector == "mahalanobis":
        return mahalanobis_ood_score(load_mixture(args.model), x)
    kind, payload = load_model(args.model)
    if args.detector == "correction":
        if kind != "correction":
            raise UsageError(f"{args.model} holds a {kind} model, not a correction model")
        return detectors.score_correction(payload, x)
    if kind != "ebm":
        raise UsageError(f"{args.model} holds a {kind} model, not an EBM")
    net, temperature = payload
    return detectors.score_ebm(net, x, temperature)


def _score_logits(args) -> np.ndarray:
    logits = load_tensor(args.logits)
    if logits.ndim != 2 or logits.dtype != np.float32:
        raise UsageError(f"{args.logits}: logits file must be a rank-2 f32 tensor")
    x = logits.astype(np.float64)
    if args.detector == "msp":
        return detectors.score_msp(x)
    if args.detector == "odin":
        return detectors.score_odin_temperature(x, args.temperature)
    return detectors.score_energy_logits(x, args.temperature)


def cmd_score(args) -> int:
    started = time.time()
    if args.detector in LOGIT_DETECTORS:
        if args.logits is None:
            raise UsageError(f"detector {args.detector} needs --logits")
        scores = _score_logits(args)
        inputs = [args.logits]
    else:
        if args.features is None:
            raise UsageError(f"detector {args.detector} needs --features")
        scores = _score_features(args)
        inputs = [args.features]
        if args.model is not None:
            inputs.append(args.model)
        if args.train_features is not None:
            inputs.append(args.train_features)
    write_tensor(args.out, np.asarray(scores, dtype=np.float32))
    params = {"k": args.k, "temperature": args.temperature,
              "normalize": bool(args.normalize)}
    sidecar = {
        "schema": SCHEMA,
        "detector": args.detector,
        "params": params,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "n_samples": int(np.asarray(scores).size),
    }
    with open(f"{args.out}.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    config = {"detector": args.detector, "out": str(args.out), **params,
              "features": None if args.features is None else str(args.features),
              "logits": None if args.logits is None else str(args.logits),
              "model": None if args.model is None else str(args.model),
              "train_features": None if args.train_features is None else str(args.train_features)}
    _write_manifest(args.out, "score", config, inputs,
                    [args.out, f"{args.out}.json"], args.seed, started)
    return 0


def _parse_ood_arg(raw: str) -> tuple[str, str, str]:
    """[group:]name=path -> (group, name, path)."""
    if "=" not in raw:
        raise UsageError(f"--ood expects [group:]name=path, got {raw!r}")
    head, path = raw.split("=", 1)
    group, _, name = head.rpartition(":")
    return group or "all", name, path


def _load_scores(path) -> np.ndarray:
    arr = load_tensor(path)
    if arr.ndim != 1 or arr.dtype != np.float32:
        raise UsageError(f"{path}: score file must be a rank-1 f32 tensor")
    return arr.astype(np.float64)


def cmd_eval(args) -> int:
    started = time.time()
    id_scores = _load_scores(args.id)
    datasets = [_parse_ood_arg(raw) for raw in args.ood]
    reports = []
    for group, name, path in datasets:
        rep = metrics.evaluate(id_scores, _load_scores(path), tpr=args.tpr)
        reports.append({"group": group, "name": name, "path": str(path),
                        **rep.to_dict()})

    def _avg(rows, key):
        return float(np.mean([r[key] for r in rows]))

    groups = []
    for group in dict.fromkeys(r["group"] for r in reports):
        rows = [r for r in reports if r["group"] == group]
        groups.append({"group": group, "n_datasets": len(rows),
                       "auroc": _avg(rows, "auroc"), "fpr95": _avg(rows, "fpr95")})
    overall = {"auroc": _avg(reports, "auroc"), "fpr95": _avg(reports, "fpr95")}
    report = {
        "schema": SCHEMA,
        "tpr": args.tpr,
        "threshold_gamma_id": metrics.threshold_gamma_id(id_scores, args.tpr),
        "n_id": int(id_scores.size),
        "datasets": reports,
        "groups": groups,
        "average": overall,
    }
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")

    if args.csv is not None:
        with open(args.csv, "w") as fh:
            fh.write("scope,group,name,fpr95,auroc\n")
            for r in reports:
                fh.write(f"dataset,{r['group']},{r['name']},{r['fpr95']:.4f},{r['auroc']:.4f}\n")
            for g in groups:
                fh.write(f"group,{g['group']},,{g['fpr95']:.4f},{g['auroc']:.4f}\n")
            fh.write(f"average,,,{overall['fpr95']:.4f},{overall['auroc']:.4f}\n")

    inputs = [args.id] + [path for _, _, path in datasets]
    artifacts = [args.out] + ([args.csv] if args.csv else [])
    _write_manifest(args.out, "eval",
                    {"id": str(args.id), "ood": list(args.ood), "tpr": args.tpr,
                     "out": str(args.out),
                     "csv": None if args.csv is None else str(args.csv)},
                    inputs, artifacts, args.seed, started)
    return 0


def cmd_grid(args) -> int:
    started = time.time()
    if args.detector == "auto":
        try:
            kind, payload = load_model(args.model)
        except ValueError:
            kind, payload = "mog", load_mixture(args.model)
        detector = {"correction": "correction", "ebm": "ebm",
                    "mog": "gaussian-energy"}[kind]
    else:
        detector = args.detector
        if detector in ("gaussian-energy", "mahalanobis"):
            payload = load_mixture(args.model)
        else:
            kind, payload = load_model(args.model)
            if kind != detector:
                raise UsageError(f"{args.model} holds a {kind} model, not {detector}")

    if detector == "correction":
        fn = lambda pts: detectors.score_correction(payload, pts)
    elif detector == "ebm":
        net, temperature = payload
        fn = lambda pts: detectors.score_ebm(net, pts, temperature)
    elif detector == "gaussian-energy":
        fn = lambda pts: gaussian_energy(payload, pts)
    else:
        fn = lambda pts: mahalanobis_ood_score(payload, pts)

    grid = energy_grid(fn, args.bounds, args.resolution, n_threads=args.threads)
    save_grid_csv(args.out_csv, grid)
    artifacts = [args.out_csv]
    if args.out_tensor is not None:
        save_grid_tensor(args.out_tensor, grid)
        artifacts.append(args.out_tensor)
    _write_manifest(args.out_csv, "grid",
                    {"model": str(args.model), "detector": args.detector,
                     "bounds": list(args.bounds), "resolution": args.resolution,
                     "out_csv": str(args.out_csv),
                     "out_tensor": None if args.out_tensor is None else str(args.out_tensor)},
                    [args.model], artifacts, args.seed, started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="energy-ood",
        description="Feature-space OOD detection: mixture fitting, energy correction, scoring, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value file; flags override it")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("toy", help="generate a 2-D synthetic dataset")
    common(p)
    p.add_argument("--kind", choices=["cross", "grid-crosses"], default="cross")
    p.add_argument("--samples-per-class", type=int, default=1000)
    p.add_argument("--arm-length", type=float, default=2.0)
    p.add_argument("--thickness", type=float, default=0.05)
    p.add_argument("--pitch", type=float, default=6.0)
    p.add_argument("--out-features", required=True)
    p.add_argument("--out-labels", required=True)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("fit-mog", help="fit the class-conditional Gaussian mixture")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--shrinkage", type=float, help="diagonal shrinkage; default 1e-6 * trace/D")
    p.add_argument("--temperature", type=float, default=1e3)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_mog)

    p = sub.add_parser("train", help="train the correction model or the plain EBM")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--mog", help="fitted mixture archive (correction model)")
    p.add_argument("--ebm", action="store_true", help="train the plain EBM ablation")
    p.add_argument("--preset", choices=["features", "toy"], default="features")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--l2-coeff", type=float)
    p.add_argument("--input-noise-std", type=float)
    p.add_argument("--sgld-steps", type=int)
    p.add_argument("--sgld-step-size", type=float, nargs=2, metavar=("START", "END"))
    p.add_argument("--sgld-noise", type=float, nargs=2, metavar=("START", "END"))
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--num-hidden", type=int)
    p.add_argument("--net-temperature", type=float)
    p.add_argument("--activation", choices=["silu", "tanh"])
    p.add_argument("--log", help="JSON-lines training log path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score samples with a detector")
    common(p)
    p.add_argument("--detector", required=True,
                   choices=list(FEATURE_DETECTORS) + list(LOGIT_DETECTORS))
    p.add_argument("--features", help="rank-2 f32 tensor of feature rows")
    p.add_argument("--logits", help="rank-2 f32 tensor of logit rows")
    p.add_argument("--model", help="model or mixture archive")
    p.add_argument("--train-features", help="training features for knn")
    p.add_argument("--k", type=int, help="neighbor count for knn")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="evaluate ID vs OOD score files")
    common(p)
    p.add_argument("--id", required=True, help="rank-1 f32 tensor of ID scores")
    p.add_argument("--ood", action="append", required=True,
                   metavar="[GROUP:]NAME=PATH", help="repeatable OOD score file")
    p.add_argument("--tpr", type=float, default=0.95)
    p.add_argument("--csv", help="optional per-dataset/group table")
    p.add_argument("--out", required=True, help="JSON report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="evaluate a saved model on a 2-D lattice")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--detector", default="auto",
                   choices=["auto", "correction", "ebm", "gaussian-energy", "mahalanobis"])
    p.add_argument("--bounds", type=float, nargs=4, required=True,
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-tensor")
    p.set_defaults(func=cmd_grid)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        argv = sys.argv[1:] if argv is None else list(argv)
        if argv and not argv[0].startswith("-"):
            # per-subcommand config file handling needs the subparser's actions
            subparser = parser._subparsers._group_actions[0].choices.get(argv[0])
            if subparser is not None:
                _apply_config_file(subparser, argv[1:])
        args = parser.parse_args(argv)
        return args.func(args)
    except (NotPositiveDefiniteError, SgldDivergenceError, TrainingDivergedError,
            GridEvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
