"""Command-line interface.

Subcommands: nms, eval, sweep, synth, train-embed, plot. Every command writes a
run manifest capturing the argv, resolved configuration, seed, and input/output
paths; re-running the recorded argv against unchanged inputs reproduces the same
bytes. Exit codes are a stable contract: 0 success, 2 input error, 3 missing
embeddings, 4 generation failure, 5 training divergence.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from . import kitti
from .embedding import (
    EmbeddingLossConfig,
    NonFiniteLoss,
    save_provider,
    train_provider,
    training_scene,
)
from .evaluation import DEFAULT_BIN_EDGES, Scene, evaluate, thread_count
from .manifest import RunManifest, write_manifest
from .plotting import Curve, load_curve_csv, save_curve_figure, write_curves_svg
from .suppression import (
    DEFAULT_SCORE_FLOOR,
    Detection,
    MissingEmbedding,
    make_algorithm,
    suppress_per_class,
)
from .synth import (
    PlacementFailure,
    generate_synthetic,
    load_corpus,
    parse_synth_config,
    write_corpus,
)

__all__ = ["entrypoint", "main"]

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MISSING_EMBEDDINGS = 3
EXIT_GENERATION = 4
EXIT_TRAINING = 5

SG_ALGORITHMS = ("sg-constant", "sg-linear", "sg-square")
ALGORITHMS = ("greedy", "soft") + SG_ALGORITHMS


def _parse_bins(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in raw.split(","))
    except ValueError:
        raise ValueError(f"bad bin edges {raw!r}: expected comma-separated floats") from None


def _parse_grid(raw: str) -> list[float]:
    parts = raw.split(":")
    if len(parts) != 3:
        raise ValueError(f"bad grid {raw!r}: expected start:stop:step")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ValueError(f"bad grid {raw!r}: non-numeric bound") from None
    if step <= 0:
        raise ValueError(f"bad grid {raw!r}: step must be positive")
    if stop < start:
        raise ValueError(f"bad grid {raw!r}: stop below start")
    n = int((stop - start) / step + 1e-9) + 1
    return [start + k * step for k in range(n)]


def _manifest_for(args: argparse.Namespace, raw_argv: list[str]) -> RunManifest:
    def jsonable(value):
        if isinstance(value, Path):
            return str(value)
        if isinstance(value, (list, tuple)):
            return [jsonable(v) for v in value]
        return value

    config = {
        key: jsonable(value)
        for key, value in sorted(vars(args).items())
        if key not in ("func", "command")
    }
    return RunManifest(
        command=args.command,
        argv=list(raw_argv),
        config=config,
        seed=getattr(args, "seed", None),
        toolkit_version=__version__,
    )


def _require_embeddings_for(algo: str, path: Optional[Path]) -> Optional[Path]:
    if algo in SG_ALGORITHMS:
        if path is None:
            raise MissingEmbedding(f"{algo} requires --embeddings")
        if not path.exists():
            raise MissingEmbedding(f"embedding sidecar not found: {path}")
    return path


def cmd_nms(args: argparse.Namespace, raw_argv: list[str]) -> int:
    records = kitti.read_kitti_file(args.dets)
    for i, r in enumerate(records):
        if r.score is None:
            raise ValueError(f"{args.dets}: line {i + 1} has no score field")
    embeddings = None
    _require_embeddings_for(args.algo, args.embeddings)
    if args.embeddings is not None:
        embeddings = kitti.parse_sidecar(Path(args.embeddings).read_text())
        if len(embeddings) != len(records):
            raise MissingEmbedding(
                f"{args.embeddings}: {len(embeddings)} embeddings for "
                f"{len(records)} detections"
            )
    class_map = kitti.class_map_for(records)
    dets = [
        kitti.record_to_detection(
            r, class_map, embedding=embeddings[i] if embeddings is not None else None
        )
        for i, r in enumerate(records)
    ]
    algorithm = make_algorithm(
        args.algo, nt=args.nt, t=args.t, score_floor=args.score_floor
    )
    result = suppress_per_class(dets, algorithm)
    kept_records = [
        replace(records[idx], score=score)
        for idx, (_, score) in zip(result.kept_indices, result.kept)
    ]
    kept_embeddings = None
    if embeddings is not None:
        kept_embeddings = [embeddings[idx] for idx in result.kept_indices]
    kitti.write_detection_file(args.out, kept_records, kept_embeddings)
    manifest = _manifest_for(args, raw_argv)
    manifest.inputs = [str(args.dets)] + (
        [str(args.embeddings)] if args.embeddings else []
    )
    manifest.outputs = [str(args.out)] + (
        [str(kitti.sidecar_path(args.out))] if kept_embeddings is not None else []
    )
    write_manifest(Path(str(args.out) + ".manifest.json"), manifest)
    return EXIT_OK


def _eval_outputs(
    report, out_dir: Path, metric: str
) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    report_path = out_dir / "report.txt"
    report_path.write_text(report.to_text())
    outputs.append(str(report_path))
    if metric == "ap":
        csv_path = out_dir / "pr_curve.csv"
        csv_path.write_text(report.pr_curve_csv())
        outputs.append(str(csv_path))
        if report.pr_curve:
            png_path = out_dir / "pr_curve.png"
            save_curve_figure(
                [Curve("precision", report.pr_curve)],
                png_path,
                title="precision vs recall",
                x_label="recall",
                y_label="precision",
            )
            outputs.append(str(png_path))
    if metric == "recall-bins":
        csv_path = out_dir / "recall_bins.csv"
        csv_path.write_text(report.recall_bins_csv())
        outputs.append(str(csv_path))
        if report.recall_by_bin:
            points = [
                ((lo + hi) / 2, r) for (lo, hi), r in sorted(report.recall_by_bin.items())
            ]
            png_path = out_dir / "recall_bins.png"
            save_curve_figure(
                [Curve("recall", points)],
                png_path,
                title="recall vs occlusion",
                x_label="max mutual IoU (bin midpoint)",
                y_label="recall",
                markers=True,
            )
            outputs.append(str(png_path))
    return outputs


def cmd_eval(args: argparse.Namespace, raw_argv: list[str]) -> int:
    scenes = kitti.load_scenes(args.gts, args.dets)
    bins = _parse_bins(args.bins) if args.metric == "recall-bins" else None
    report = evaluate(
        scenes,
        args.iou,
        with_ap=args.metric == "ap",
        with_lamr=args.metric == "lamr",
        bin_edges=bins,
    )
    out_dir = Path(args.out)
    outputs = _eval_outputs(report, out_dir, args.metric)
    manifest = _manifest_for(args, raw_argv)
    manifest.inputs = [str(args.gts), str(args.dets)]
    manifest.outputs = outputs
    write_manifest(out_dir / "manifest.json", manifest)
    return EXIT_OK


def _suppressed_scene(scene: Scene, index: int, algorithm) -> tuple[Scene, set]:
    result = suppress_per_class(scene.detections, algorithm)
    dets = [
        Detection(
            box=d.box,
            score=score,
            embedding=d.embedding,
            class_id=d.class_id,
            object_id=d.object_id,
            descriptor=d.descriptor,
        )
        for d, score in result.kept
    ]
    kept_ids = {(index, i) for i in result.kept_indices}
    return (
        Scene(
            id=scene.id,
            detections=dets,
            ground_truths=scene.ground_truths,
            image_size=scene.image_size,
        ),
        kept_ids,
    )


def _kept_relation(prev: set, current: set) -> str:
    if current == prev:
        return "equal"
    if current <= prev:
        return "subset"
    if current >= prev:
        return "superset"
    return "mixed"


def cmd_sweep(args: argparse.Namespace, raw_argv: list[str]) -> int:
    values = _parse_grid(args.param_grid)
    edges = _parse_bins(args.bins)
    scenes = kitti.load_scenes(args.gts, args.dets)
    sweep_sg = args.algo in SG_ALGORITHMS
    if sweep_sg and args.nt is None:
        raise ValueError(f"{args.algo} sweep scans t and requires a fixed --nt")
    if not sweep_sg and args.nt is not None:
        raise ValueError(f"{args.algo} sweep scans --nt itself; drop the flag")

    def run_cell(value: float):
        if sweep_sg:
            algorithm = make_algorithm(args.algo, nt=args.nt, t=value)
        else:
            algorithm = make_algorithm(
                args.algo, nt=value, score_floor=args.score_floor
            )
        kept_ids: set = set()
        suppressed = []
        for idx, scene in enumerate(scenes):
            new_scene, ids = _suppressed_scene(scene, idx, algorithm)
            suppressed.append(new_scene)
            kept_ids |= ids
        report = evaluate(suppressed, args.iou, with_ap=True, bin_edges=edges)
        return report, kept_ids

    from concurrent.futures import ThreadPoolExecutor

    workers = min(thread_count(), max(1, len(values)))
    if workers > 1 and len(values) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(run_cell, values))
    else:
        cells = [run_cell(v) for v in values]

    bin_pairs = [(edges[k], edges[k + 1]) for k in range(len(edges) - 1)]
    header = ["param", "ap"]
    header += [f"recall_{lo:g}_{hi:g}" for lo, hi in bin_pairs]
    header += ["kept_boxes", "kept_vs_prev"]
    rows = [",".join(header)]
    prev_ids: Optional[set] = None
    for value, (report, kept_ids) in zip(values, cells):
        row = [f"{value:.6g}", f"{report.ap:.6f}"]
        for pair in bin_pairs:
            r = report.recall_by_bin.get(pair)
            row.append("" if r is None else f"{r:.6f}")
        row.append(str(len(kept_ids)))
        row.append("" if prev_ids is None else _kept_relation(prev_ids, kept_ids))
        prev_ids = kept_ids
        rows.append(",".join(row))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep.csv"
    csv_path.write_text("\n".join(rows) + "\n")
    outputs = [str(csv_path)]

    curves = [Curve("ap", [(v, c[0].ap) for v, c in zip(values, cells)])]
    for pair in bin_pairs:
        points = [
            (v, c[0].recall_by_bin[pair])
            for v, c in zip(values, cells)
            if pair in c[0].recall_by_bin
        ]
        if points:
            curves.append(Curve(f"recall {pair[0]:g}-{pair[1]:g}", points))
    png_path = out_dir / "sweep.png"
    save_curve_figure(
        curves,
        png_path,
        title=f"{args.algo} sweep",
        x_label="t" if sweep_sg else "overlap threshold",
        y_label="metric",
        markers=True,
    )
    outputs.append(str(png_path))
    manifest = _manifest_for(args, raw_argv)
    manifest.inputs = [str(args.gts), str(args.dets)]
    manifest.outputs = outputs
    write_manifest(out_dir / "manifest.json", manifest)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, raw_argv: list[str]) -> int:
    config = parse_synth_config(Path(args.config).read_text())
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    scenes, stats = generate_synthetic(config)
    out_dir = Path(args.out_dir)
    write_corpus(out_dir, scenes, stats, config)
    manifest = _manifest_for(args, raw_argv)
    manifest.seed = config.seed
    manifest.config["generator"] = {
        k: list(v) if isinstance(v, tuple) else v
        for k, v in vars(config).items()
    }
    manifest.inputs = [str(args.config)]
    manifest.outputs = [str(out_dir)]
    write_manifest(out_dir / "manifest.json", manifest)
    return EXIT_OK


def cmd_train_embed(args: argparse.Namespace, raw_argv: list[str]) -> int:
    scenes = load_corpus(args.scenes)
    train_scenes = [training_scene(s) for s in scenes]
    config = EmbeddingLossConfig(theta=args.theta, rho=args.rho, sigma=args.sigma)
    loss_log: list[tuple[int, float, float]] = []
    provider = train_provider(
        train_scenes,
        config,
        learning_rate=args.lr,
        iterations=args.iters,
        seed=args.seed,
        loss_log=loss_log,
    )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_provider(provider, out_path)
    loss_path = Path(str(out_path) + ".loss.csv")
    rows = ["iteration,group_loss,separation_loss"]
    rows += [f"{it},{g:.9g},{s:.9g}" for it, g, s in loss_log]
    loss_path.write_text("\n".join(rows) + "\n")
    manifest = _manifest_for(args, raw_argv)
    manifest.inputs = [str(args.scenes)]
    manifest.outputs = [str(out_path), str(loss_path)]
    write_manifest(Path(str(out_path) + ".manifest.json"), manifest)
    return EXIT_OK


def cmd_plot(args: argparse.Namespace, raw_argv: list[str]) -> int:
    curves = [load_curve_csv(p) for p in args.curves]
    svg = write_curves_svg(
        curves, title=args.title, x_label=args.x_label, y_label=args.y_label
    )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(svg)
    manifest = _manifest_for(args, raw_argv)
    manifest.inputs = [str(p) for p in args.curves]
    manifest.outputs = [str(out_path)]
    write_manifest(Path(str(out_path) + ".manifest.json"), manifest)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgnms",
        description="Detection post-processing: embedding-gated NMS, evaluation, synthesis.",
    )
    parser.add_argument("--version", action="version", version=f"sgnms {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nms", help="suppress one detection file")
    p.add_argument("--dets", type=Path, required=True, help="detection file (16-field lines)")
    p.add_argument("--algo", choices=ALGORITHMS, required=True)
    p.add_argument("--nt", type=float, required=True, help="overlap threshold")
    p.add_argument("--t", type=float, default=None, help="threshold-function parameter for sg-*")
    p.add_argument("--embeddings", type=Path, default=None, help="embedding sidecar file")
    p.add_argument("--score-floor", type=float, default=DEFAULT_SCORE_FLOOR,
                   help="drop soft-rescored boxes below this score")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("eval", help="evaluate detections against labels")
    p.add_argument("--dets", type=Path, required=True, help="detection file or directory")
    p.add_argument("--gts", type=Path, required=True, help="label file or directory")
    p.add_argument("--iou", type=float, default=0.5, help="matching IoU threshold")
    p.add_argument("--metric", choices=("ap", "lamr", "recall-bins"), default="ap")
    p.add_argument("--bins", default="0,0.2,0.5,1.0",
                   help="comma-separated occlusion bin edges for --metric recall-bins")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate a threshold grid")
    p.add_argument("--dets", type=Path, required=True)
    p.add_argument("--gts", type=Path, required=True)
    p.add_argument("--algo", choices=ALGORITHMS, required=True)
    p.add_argument("--param-grid", required=True, help="start:stop:step; scans t for sg-*, nt otherwise")
    p.add_argument("--nt", type=float, default=None, help="fixed overlap threshold for sg-* sweeps")
    p.add_argument("--score-floor", type=float, default=DEFAULT_SCORE_FLOOR)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--bins", default="0,0.2,0.5,1.0")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", type=Path, required=True, help="key = value config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-embed", help="train the semantic weights on a corpus")
    p.add_argument("--scenes", type=Path, required=True, help="corpus directory")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--theta", type=float, default=0.7)
    p.add_argument("--rho", type=float, default=0.27)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="provider output file")
    p.set_defaults(func=cmd_train_embed)

    p = sub.add_parser("plot", help="render curve CSVs to a static SVG")
    p.add_argument("--curves", type=Path, nargs="+", required=True)
    p.add_argument("--title", default="")
    p.add_argument("--x-label", default="")
    p.add_argument("--y-label", default="")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    raw_argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(raw_argv)
    try:
        return args.func(args, raw_argv)
    except MissingEmbedding as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_EMBEDDINGS
    except PlacementFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
