"""Command-line entry point: synth, fit, cluster, eval, bench, render.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure,
4 benchmark sanity failure.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import ClusterParams, DbscanParams, dbscan, fast_cluster
from .core import read_labels, write_labels
from .exceptions import LanembedError, NumericError
from .metrics import BenchSanityError, EvalParams, bench_clustering, converged_fields, evaluate
from .optimize import FitConfig, fit, load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate_scene, load_scene, save_scene

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_SANITY = 4

PALETTE = np.array(
    [
        (0, 0, 0),
        (230, 25, 75),
        (60, 180, 75),
        (255, 225, 25),
        (0, 130, 200),
        (245, 130, 48),
        (145, 30, 180),
        (70, 240, 240),
        (240, 50, 230),
        (210, 245, 60),
        (250, 190, 212),
        (0, 128, 128),
        (220, 190, 255),
        (170, 110, 40),
        (255, 250, 200),
        (128, 0, 0),
        (170, 255, 195),
    ],
    dtype=np.uint8,
)


class InputError(LanembedError):
    pass


def _read_json(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


def _write_manifest(path, command, config, inputs, outputs, started):
    manifest = {
        "command": command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "elapsed_ms": (time.perf_counter() - started) * 1e3,
        "version": __version__,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stderr.write(text)
    else:
        Path(path).write_text(text)


def _require_dir(path, what):
    path = Path(path)
    if not path.is_dir():
        raise InputError(f"{what} directory not found: {path}")
    return path


def cmd_synth(args):
    started = time.perf_counter()
    data = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        data["rng_seed"] = args.seed
    cfg = SynthConfig.from_dict(data)
    scene = generate_scene(cfg)
    out = Path(args.out)
    save_scene(scene, out)
    _write_manifest(
        out / "run_manifest.json",
        "synth",
        cfg.to_dict(),
        [args.config] if args.config else [],
        [out / "labels.lel", out / "scene.json"],
        started,
    )
    return EXIT_OK


def cmd_fit(args):
    started = time.perf_counter()
    scene_dir = _require_dir(args.scene, "scene")
    cfg = FitConfig.from_dict(_read_json(args.config)) if args.config else FitConfig()
    if args.seed is not None:
        cfg = FitConfig.from_dict({**cfg.to_dict(), "rng_seed": args.seed})
    labels = read_labels(scene_dir / "labels.lel")
    state, trajectory = fit(labels, cfg)
    out = Path(args.out)
    save_checkpoint(state, out, len(trajectory), cfg)
    with open(out / "trajectory.jsonl", "w") as fh:
        for i, report in enumerate(trajectory):
            fh.write(json.dumps({"step": i, **report.to_dict()}, sort_keys=True) + "\n")
    _write_manifest(
        out / "run_manifest.json",
        "fit",
        cfg.to_dict(),
        [scene_dir / "labels.lel"] + ([args.config] if args.config else []),
        [out / n for n in ("offsets.lef", "sigma_logit.lef", "seed_logit.lef", "manifest.json", "trajectory.jsonl")],
        started,
    )
    return EXIT_OK


def cmd_cluster(args):
    started = time.perf_counter()
    ckpt_dir = _require_dir(args.checkpoint, "checkpoint")
    scene_dir = _require_dir(args.scene, "scene")
    state = load_checkpoint(ckpt_dir)
    labels = read_labels(scene_dir / "labels.lel")
    if labels.shape != state.shape:
        raise InputError(f"checkpoint grid {state.shape} does not match scene grid {labels.shape}")
    data = _read_json(args.config) if args.config else {}
    fg = labels > 0
    emb = state.embedding()
    if args.method == "fast":
        params = ClusterParams.from_dict(data)
        pred = fast_cluster(emb, state.sigma, state.seed, fg, params)
    else:
        params = DbscanParams.from_dict(data)
        pred = dbscan(emb, fg, params)
    write_labels(args.out, pred)
    _write_manifest(
        f"{args.out}.manifest.json",
        "cluster",
        {"method": args.method, **params.to_dict()},
        [ckpt_dir, scene_dir] + ([args.config] if args.config else []),
        [args.out],
        started,
    )
    return EXIT_OK


def cmd_eval(args):
    started = time.perf_counter()
    scene = load_scene(_require_dir(args.scene, "scene"))
    if not Path(args.pred).is_file():
        raise InputError(f"no such file: {args.pred}")
    pred = read_labels(args.pred)
    if pred.shape != scene.labels.shape:
        raise InputError(f"prediction grid {pred.shape} does not match scene grid {scene.labels.shape}")
    if args.config:
        params = EvalParams.from_dict(_read_json(args.config))
    else:
        params = EvalParams.for_width(scene.labels.shape[1])
    report = evaluate([pred], [scene], params)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(text)
    outputs = []
    if args.out:
        Path(args.out).write_text(text + "\n")
        outputs.append(args.out)
    if args.csv:
        report.to_csv(args.csv)
        outputs.append(args.csv)
    _write_manifest(
        f"{args.out}.manifest.json" if args.out else None,
        "eval",
        params.to_dict(),
        [args.pred, args.scene],
        outputs,
        started,
    )
    return EXIT_OK


def _parse_sizes(text):
    sizes = []
    for item in text.split(","):
        try:
            w, h = (int(v) for v in item.lower().split("x"))
        except ValueError as exc:
            raise InputError(f"bad size {item!r}; expected WIDTHxHEIGHT") from exc
        sizes.append((w, h))
    return sizes


def cmd_bench(args):
    started = time.perf_counter()
    cluster_params = ClusterParams()
    dbscan_params = DbscanParams()
    results = []
    for width, height in _parse_sizes(args.sizes):
        batch = []
        for i in range(args.scenes):
            cfg = SynthConfig(height=height, width=width, num_lanes=args.lanes, rng_seed=args.seed + i)
            batch.append(converged_fields(generate_scene(cfg), rng_seed=args.seed + i))
        report = bench_clustering(batch, cluster_params, dbscan_params, runs=args.runs, warmup=args.warmup)
        results.append({"width": width, "height": height, "lanes": args.lanes, **report.to_dict()})
    text = json.dumps({"results": results}, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    _write_manifest(
        f"{args.out}.manifest.json" if args.out else None,
        "bench",
        {
            "sizes": args.sizes,
            "lanes": args.lanes,
            "scenes": args.scenes,
            "seed": args.seed,
            "cluster": cluster_params.to_dict(),
            "dbscan": dbscan_params.to_dict(),
        },
        [],
        [args.out] if args.out else [],
        started,
    )
    return EXIT_OK


def render_instances(labels):
    """Color every pixel by instance id (0 stays black)."""
    labels = np.asarray(labels, dtype=np.int64)
    colors = np.where(labels > 0, (labels - 1) % (len(PALETTE) - 1) + 1, 0)
    return PALETTE[colors]


def render_embedding(embedding, labels):
    """Scatter each foreground pixel to the raster cell holding its embedding."""
    labels = np.asarray(labels, dtype=np.int64)
    h, w = labels.shape
    img = np.zeros((h, w, 3), dtype=np.uint8)
    fg = labels > 0
    cells = np.floor(np.asarray(embedding, dtype=np.float64)[fg]).astype(np.int64)
    ids = labels[fg]
    inside = (cells[:, 0] >= 0) & (cells[:, 0] < w) & (cells[:, 1] >= 0) & (cells[:, 1] < h)
    colors = (ids[inside] - 1) % (len(PALETTE) - 1) + 1
    img[cells[inside, 1], cells[inside, 0]] = PALETTE[colors]
    return img


def write_ppm(path, image):
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def cmd_render(args):
    started = time.perf_counter()
    scene_dir = _require_dir(args.scene, "scene")
    gt = read_labels(scene_dir / "labels.lel")
    inputs = [scene_dir]
    if args.checkpoint:
        state = load_checkpoint(_require_dir(args.checkpoint, "checkpoint"))
        if state.shape != gt.shape:
            raise InputError(f"checkpoint grid {state.shape} does not match scene grid {gt.shape}")
        image = render_embedding(state.embedding(), gt)
        inputs.append(args.checkpoint)
    else:
        labels = read_labels(args.labels) if args.labels else gt
        if labels.shape != gt.shape:
            raise InputError(f"labels grid {labels.shape} does not match scene grid {gt.shape}")
        image = render_instances(labels)
        if args.labels:
            inputs.append(args.labels)
    write_ppm(args.out, image)
    _write_manifest(f"{args.out}.manifest.json", "render", {}, inputs, [args.out], started)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="lanembed", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic lane scene")
    p.add_argument("--config", help="SynthConfig JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override rng_seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="optimize embedding fields for a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", help="FitConfig JSON")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--seed", type=int, help="override rng_seed")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cluster", help="cluster fitted fields into instances")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--config", help="ClusterParams or DbscanParams JSON")
    p.add_argument("--method", choices=("fast", "dbscan"), default="fast")
    p.add_argument("--out", required=True, help="predicted LEL1 file")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="score a predicted labeling against a scene")
    p.add_argument("--pred", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--config", help="EvalParams JSON (default: tolerance scaled to width)")
    p.add_argument("--out", help="also write the report here")
    p.add_argument("--csv", help="per-scene CSV export")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time fast clustering against DBSCAN")
    p.add_argument("--sizes", default="256x128", help="comma-separated WIDTHxHEIGHT list")
    p.add_argument("--lanes", type=int, default=5)
    p.add_argument("--scenes", type=int, default=3)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="write a PPM of instances or embeddings")
    p.add_argument("--scene", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--checkpoint", help="render embedding positions from a checkpoint")
    src.add_argument("--labels", help="render an LEL1 labeling (default: scene ground truth)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"lanembed {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BenchSanityError as exc:
        print(f"lanembed {args.command}: sanity check failed: {exc}", file=sys.stderr)
        return EXIT_SANITY
    except (LanembedError, OSError, TypeError, KeyError) as exc:
        print(f"lanembed {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
