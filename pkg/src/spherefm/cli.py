"""``sfm`` command line: synth, train, fit, eval-cluster and interp.

Every subcommand writes a ``manifest.json`` next to its outputs holding the
fully resolved argument list, so ``sfm --manifest path [overrides...]``
replays the run. Exit codes: 0 success, 1 runtime or data failure, 2 usage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .corpus import corpus_rows, load_corpus
from .fit import FitConfig, fit_corpus
from .mesh import load_obj, save_obj
from .metrics import DISTANCES, SPACES, code_vectors, report_from_vectors
from .model import ShapeCode, interpolate_codes, load_model, reconstruct, save_model
from .synth import SynthConfig, generate, write_synth
from .train import TrainConfig, export_codes_csv, pca_baseline, read_codes_csv, train_stage1

log = logging.getLogger("spherefm")

MANIFEST = "manifest.json"


class CommandError(Exception):
    """A runtime or data failure reported to the user with exit code 1."""


# ---------------------------------------------------------------------------
# helpers


def _default_seed() -> int:
    raw = os.environ.get("SFM_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CommandError(f"SFM_SEED={raw!r} is not an integer") from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(obj, path) -> None:
    """Sorted, indented JSON; floats keep full round-trip precision."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False))
        fh.write("\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _resolved_argv(parser: argparse.ArgumentParser, args: argparse.Namespace) -> list:
    """Re-serialize parsed arguments with every default materialized."""
    out = [args.command]
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help",):
            continue
        flag = action.option_strings[-1]
        value = getattr(args, action.dest)
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                out.append(flag)
        elif value is None:
            continue
        elif isinstance(value, (list, tuple)):
            out.append(flag)
            out.extend(str(v) for v in value)
        else:
            out.extend([flag, str(value)])
    return out


def _write_manifest(path, args, parser, inputs, outputs, config, wall_time) -> None:
    manifest = {
        "subcommand": args.command,
        "argv": _resolved_argv(parser, args),
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": inputs,
        "outputs": {os.path.basename(p): _sha256(p) for p in outputs},
        "tool_version": __version__,
        "threads": args.threads,
        "wall_time": wall_time,
    }
    write_json(manifest, path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, parser) -> int:
    cfg = SynthConfig(
        vertex_count=args.vertices, d_true=args.dim, n_identities=args.identities,
        samples_per_identity=args.per_id, within_identity_angle=args.angle,
        scale_mean=args.scale_mean, scale_std=args.scale_std, vertex_noise=args.noise, seed=args.seed,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    t0 = time.perf_counter()
    corpus, truth = generate(cfg)
    write_synth(corpus, truth, args.out)
    outputs = [os.path.join(args.out, n) for n in corpus.names]
    outputs += [os.path.join(args.out, n) for n in ("labels.csv", "truth.sfmb", "truth_codes.csv")]
    _write_manifest(os.path.join(args.out, MANIFEST), args, parser, {}, outputs,
                    asdict(cfg), time.perf_counter() - t0)
    print(f"wrote {len(corpus)} meshes ({cfg.n_identities} identities) to {args.out}")
    return 0


def cmd_train(args, parser) -> int:
    corpus = load_corpus(args.corpus)
    cfg = TrainConfig(
        d=args.dim, lr_code=args.lr_code, lr_basis=args.lr_basis, batch_size=args.batch_size,
        epochs=args.epochs, decay_factor=args.decay_factor, decay_every=args.decay_every,
        lambda_m=args.lambda_m, lambda_c=args.lambda_c, lambda_s=args.lambda_s, seed=args.seed,
        center_denominator=args.center_denominator, logit_scale=args.logit_scale,
    )
    if args.mode == "sphere-linear":
        cfg.lambda_m = cfg.lambda_c = 0.0
    try:
        cfg.validate(corpus.vertex_count, len(corpus))
    except ValueError as exc:
        raise CommandError(str(exc)) from None

    t0 = time.perf_counter()
    result = pca_baseline(corpus, cfg.d) if args.mode == "pca" else train_stage1(corpus, cfg)
    wall = time.perf_counter() - t0

    os.makedirs(args.out, exist_ok=True)
    paths = {n: os.path.join(args.out, n) for n in ("model.sfmb", "codes.csv", "train_report.json")}
    save_model(result.model, paths["model.sfmb"])
    export_codes_csv(result.codes, corpus.labels, paths["codes.csv"])
    config = asdict(cfg)
    report = {"mode": args.mode, "config": config, "n_samples": len(corpus),
              "n_classes": corpus.n_classes, **result.report.to_dict()}
    write_json(report, paths["train_report.json"])
    _write_manifest(os.path.join(args.out, MANIFEST), args, parser, {"corpus": args.corpus},
                    list(paths.values()), {"mode": args.mode, **config}, wall)
    print(f"{args.mode}: d={cfg.d} rmse={result.report.rmse:.6g} "
          f"ortho_error={result.report.ortho_error_final:.3g} -> {args.out}")
    return 0


def _load_fit_targets(directory):
    """Meshes keyed by row; unreadable files become per-mesh errors."""
    rows = corpus_rows(directory)
    meshes, errors = [], {}
    for i, (name, _) in enumerate(rows):
        try:
            meshes.append(load_obj(os.path.join(directory, name)))
        except (OSError, ValueError) as exc:
            meshes.append(None)
            errors[i] = f"{type(exc).__name__}: {exc}"
    return rows, meshes, errors


def cmd_fit(args, parser) -> int:
    model = load_model(args.model)
    cfg = FitConfig(lr=args.lr, decay_factor=args.decay_factor, decay_every=args.decay_every,
                    iterations=args.iters, seed=args.seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    rows, meshes, load_errors = _load_fit_targets(args.meshes)
    raw_labels = np.array([r[1] for r in rows], dtype=np.int64)
    idx = [i for i, m in enumerate(meshes) if m is not None]

    t0 = time.perf_counter()
    entries = [{"name": name, "identity": int(lab), "rmse": None, "error": load_errors.get(i)}
               for i, (name, lab) in enumerate(rows)]
    good_codes, good_labels = [], []
    if idx:
        res = fit_corpus(model, [meshes[i] for i in idx], cfg, raw_labels[idx], workers=args.threads)
        failed = {f["index"]: f["error"] for f in res.failures}
        for j, i in enumerate(idx):
            if j in failed:
                entries[i]["error"] = failed[j]
            else:
                entries[i]["rmse"] = float(res.rmses[j])
                good_codes.append(res.codes[j])
                good_labels.append(int(raw_labels[i]))
    wall = time.perf_counter() - t0

    failures = [{"name": e["name"], "error": e["error"]} for e in entries if e["error"]]
    rmses = [e["rmse"] for e in entries if e["rmse"] is not None]
    os.makedirs(args.out, exist_ok=True)
    codes_path = os.path.join(args.out, "codes.csv")
    report_path = os.path.join(args.out, "fit_report.json")
    outputs = [report_path]
    if good_codes:
        export_codes_csv(good_codes, good_labels, codes_path)
        outputs.insert(0, codes_path)
    config = asdict(cfg)
    write_json({
        "config": config,
        "n_meshes": len(rows),
        "n_ok": len(good_codes),
        "mean_rmse": float(np.mean(rmses)) if rmses else None,
        "meshes": entries,
        "failures": failures,
    }, report_path)
    _write_manifest(os.path.join(args.out, MANIFEST), args, parser,
                    {"model": args.model, "meshes": args.meshes}, outputs, config, wall)
    for f in failures:
        print(f"error: {f['name']}: {f['error']}", file=sys.stderr)
    if not good_codes:
        print("error: no mesh could be fitted", file=sys.stderr)
        return 1
    print(f"fitted {len(good_codes)}/{len(rows)} meshes, mean rmse {np.mean(rmses):.6g} -> {args.out}")
    return 0


def _read_rmse(path):
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    for key in ("mean_rmse", "rmse"):
        if isinstance(data.get(key), (int, float)):
            return float(data[key])
    raise CommandError(f"{path}: no 'mean_rmse' or 'rmse' entry")


def cmd_eval(args, parser) -> int:
    codes, labels = read_codes_csv(args.codes)
    if not codes:
        raise CommandError(f"{args.codes}: no codes")
    rmse = _read_rmse(args.rmse_from) if args.rmse_from else None
    distances = DISTANCES if args.distance == "both" else (args.distance,)
    t0 = time.perf_counter()
    report = report_from_vectors(code_vectors(codes, args.space), labels,
                                 None if rmse is None else [rmse], args.space,
                                 args.paper_literal_silhouette, distances)
    wall = time.perf_counter() - t0
    print(report.table_header())
    print(report.table_row(args.name or os.path.basename(os.path.dirname(os.path.abspath(args.codes)))))
    if args.out:
        out_dir = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(out_dir, exist_ok=True)
        write_json(report.to_dict(), args.out)
        stem = os.path.splitext(args.out)[0]
        _write_manifest(stem + ".manifest.json", args, parser, {"codes": args.codes},
                        [args.out], {"space": args.space, "distance": args.distance,
                                     "paper_literal_silhouette": args.paper_literal_silhouette}, wall)
    return 0


def _inline_code(text) -> ShapeCode:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise CommandError(f"inline code {text!r} is not a comma-separated list of numbers") from None
    if len(vals) < 2:
        raise CommandError("inline code needs 's,x_0,...'")
    return ShapeCode(vals[1:], vals[0])


def cmd_interp(args, parser) -> int:
    model = load_model(args.model)
    if args.rows is not None:
        if not args.codes:
            raise CommandError("--rows needs --codes")
        codes, _ = read_codes_csv(args.codes)
        for r in args.rows:
            if not 0 <= r < len(codes):
                raise CommandError(f"row {r} out of range (codes file has {len(codes)} rows)")
        a, b = codes[args.rows[0]], codes[args.rows[1]]
    elif args.code_a and args.code_b:
        a, b = _inline_code(args.code_a), _inline_code(args.code_b)
    else:
        raise CommandError("give either --codes with --rows I J, or --code-a and --code-b")
    if a.d != model.d or b.d != model.d:
        raise CommandError(f"codes have dimension {a.d}/{b.d}, model expects {model.d}")

    t0 = time.perf_counter()
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for i in range(args.steps):
        t = i / (args.steps - 1)
        path = os.path.join(args.out, f"frame_{i:03d}.obj")
        save_obj(reconstruct(model, interpolate_codes(a, b, t)), path)
        outputs.append(path)
    _write_manifest(os.path.join(args.out, MANIFEST), args, parser,
                    {"model": args.model, "codes": args.codes}, outputs, {"steps": args.steps},
                    time.perf_counter() - t0)
    print(f"wrote {args.steps} frames to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _at_least(lo, kind=int):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {text!r}") from None
        if v < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {v}")
        return v
    return conv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfm", description="Sphere face model: train, fit, evaluate and interpolate 3D shape models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--manifest", metavar="PATH",
                        help="replay the run recorded in a manifest; extra flags override it")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_at_least(1), default=1,
                        help="BLAS threads and fit workers (1 is bit-reproducible)")
    common.add_argument("-v", "--verbose", action="store_true")

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, default=None, help="random seed (default: $SFM_SEED or 0)")

    p = sub.add_parser("synth", parents=[common, seeded], help="generate a labeled synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--vertices", type=_at_least(4), default=500)
    p.add_argument("--dim", type=_at_least(1), default=16)
    p.add_argument("--identities", type=_at_least(1), default=20)
    p.add_argument("--per-id", type=_at_least(1), default=10)
    p.add_argument("--angle", type=float, default=0.1, help="within-identity angular spread (rad)")
    p.add_argument("--scale-mean", type=float, default=4.0)
    p.add_argument("--scale-std", type=float, default=0.4)
    p.add_argument("--noise", type=float, default=0.5, help="per-coordinate vertex noise")
    p.set_defaults(func=cmd_synth)

    d = TrainConfig()
    p = sub.add_parser("train", parents=[common, seeded], help="train a model on a labeled corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("sfm", "sphere-linear", "pca"), default="sfm")
    p.add_argument("--dim", type=_at_least(1), default=d.d)
    p.add_argument("--lr-code", type=float, default=d.lr_code)
    p.add_argument("--lr-basis", type=float, default=d.lr_basis)
    p.add_argument("--batch-size", type=_at_least(1), default=d.batch_size)
    p.add_argument("--epochs", type=_at_least(0), default=d.epochs)
    p.add_argument("--decay-factor", type=float, default=d.decay_factor)
    p.add_argument("--decay-every", type=_at_least(1), default=d.decay_every)
    p.add_argument("--lambda-m", type=float, default=d.lambda_m)
    p.add_argument("--lambda-c", type=float, default=d.lambda_c)
    p.add_argument("--lambda-s", type=float, default=d.lambda_s)
    p.add_argument("--logit-scale", type=float, default=d.logit_scale)
    p.add_argument("--center-denominator", choices=("pair_mean", "paper_literal"), default=d.center_denominator)
    p.set_defaults(func=cmd_train)

    f = FitConfig()
    p = sub.add_parser("fit", parents=[common, seeded], help="fit codes of a trained model to meshes")
    p.add_argument("--model", required=True)
    p.add_argument("--meshes", required=True, help="directory of OBJ files (labels.csv optional)")
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=_at_least(0), default=f.iterations)
    p.add_argument("--lr", type=float, default=f.lr)
    p.add_argument("--decay-factor", type=float, default=f.decay_factor)
    p.add_argument("--decay-every", type=_at_least(1), default=f.decay_every)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval-cluster", parents=[common], help="separability report for a codes CSV")
    p.add_argument("--codes", required=True)
    p.add_argument("--space", choices=SPACES, default="scaled")
    p.add_argument("--distance", choices=("both",) + DISTANCES, default="both")
    p.add_argument("--paper-literal-silhouette", action="store_true",
                   help="sum (a-b)/max(a,b) instead of averaging (b-a)/max(a,b)")
    p.add_argument("--rmse-from", metavar="JSON", help="train or fit report supplying the RMSE column")
    p.add_argument("--name", default=None, help="row label for the printed table")
    p.add_argument("--out", default=None, help="write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("interp", parents=[common], help="write an interpolation sequence as OBJ frames")
    p.add_argument("--model", required=True)
    p.add_argument("--codes", default=None)
    p.add_argument("--rows", type=int, nargs=2, metavar=("I", "J"), default=None)
    p.add_argument("--code-a", default=None, help="inline 's,x_0,...'")
    p.add_argument("--code-b", default=None)
    p.add_argument("--steps", type=_at_least(2), default=11)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_interp)
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _replay_argv(argv):
    """Expand ``--manifest PATH [overrides]`` into the recorded argument list."""
    path, rest = argv[1], argv[2:]
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    recorded = manifest.get("argv")
    if not isinstance(recorded, list) or not recorded:
        raise CommandError(f"{path}: manifest has no argument list")
    return [str(a) for a in recorded] + list(rest)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if len(argv) >= 1 and argv[0] == "--manifest":
            if len(argv) < 2:
                parser.error("--manifest needs a path")
            argv = _replay_argv(argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError, CommandError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        with threadpool_limits(limits=args.threads):
            return args.func(args, _subparser(parser, args.command))
    except (CommandError, OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
