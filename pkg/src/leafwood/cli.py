"""Command-line pipeline: synth -> ingest -> gvd -> features -> transfer/split
-> batch -> train -> predict -> eval.

Stages communicate through plain CSV files so each one is independently
re-runnable and auditable. Flag precedence is defaults < --config file <
explicit flags, and every stage echoes its effective algorithmic
configuration (no paths) into the output directory. Exit codes: 0 success,
1 stage failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import batching, classifier, features, gvd, io, labeling, metrics, synth, voxel
from .config import ConfigError, PipelineConfig

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _pair(text: str) -> tuple[float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'low,high', got {text!r}")
    return parts[0], parts[1]


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(","))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(","))


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    return cfg.override(seed=args.seed, threads=args.threads)


def _echo(cfg: PipelineConfig, target, stage: str) -> None:
    target = Path(target)
    directory = target if target.suffix == "" else target.parent
    cfg.echo(directory if str(directory) else Path("."), stage)


def _require_columns(cloud: io.PointCloud, names: list[str], path) -> None:
    missing = [n for n in names if n not in cloud.extras]
    if missing:
        raise io.SchemaError(f"{path} lacks required columns {missing}")


def cmd_config(args, cfg: PipelineConfig) -> int:
    text = cfg.to_json()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args, cfg: PipelineConfig) -> int:
    params = synth.ForestParams(
        trees=args.trees,
        trunk_height=args.trunk_height,
        trunk_radius=args.trunk_radius,
        branches_per_tree=args.branches_per_tree,
        crown_radii=args.crown_radii,
        points_per_tree=args.points_per_tree,
        wood_fraction=args.wood_fraction,
        noise_sigma=args.noise_sigma,
        seed=cfg.seed,
        spacing=args.spacing,
    )
    cloud = synth.generate(params)
    io.write_csv(cloud, args.output)
    _echo(cfg, args.output, "synth")
    return EXIT_OK


def cmd_ingest(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(min_intensity_db=args.min_intensity_db, precision=args.precision)
    cloud = io.parse_csv(args.input) if not args.ply else io.read_ply(args.input)
    cloud = io.filter_quality(cloud, cfg.min_intensity_db, args.max_deviation)
    cloud = io.subsample_precision(cloud, cfg.precision)
    io.write_csv(cloud, args.output)
    _echo(cfg, args.output, "ingest")
    return EXIT_OK


def cmd_gvd(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(
        voxel_size=args.voxel_size,
        tau=args.tau,
        gamma=args.gamma,
        min_voxels=args.min_voxels,
        min_points=args.min_points,
        connectivity=args.connectivity,
    )
    cloud = io.parse_csv(args.input)
    grid = voxel.voxelize(cloud, cfg.voxel_size, cfg.connectivity)
    decomposition = gvd.decompose(
        grid,
        gvd.GvdConfig(
            tau=cfg.tau,
            gamma=cfg.gamma,
            min_voxels=cfg.min_voxels,
            min_points=cfg.min_points,
        ),
    )
    component_id, seed_distance, residual = gvd.point_component_table(
        decomposition, len(cloud)
    )
    order = np.full(len(cloud), -1, dtype=np.int64)
    for component in decomposition.all_components():
        ordered = gvd.sort_component_points(component)
        order[ordered] = np.arange(len(ordered), dtype=np.int64)
    extras = dict(cloud.extras)
    extras.update(
        component_id=component_id.astype(np.float64),
        gd=seed_distance.astype(np.float64),
        residual=residual.astype(np.float64),
        gvd_order=order.astype(np.float64),
    )
    io.write_csv(cloud.replace(extras=extras), args.output)
    _echo(cfg, args.output, "gvd")
    return EXIT_OK


def cmd_features(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(
        radii=args.radii, linearity_denominator=args.linearity_denominator
    )
    cloud = io.parse_csv(args.input)
    spec = features.NeighborhoodSpec(cfg.radii)
    names = features.feature_column_names(cfg.radii)
    raw = features.multiscale_features(
        cloud, spec, cfg.linearity_denominator, threads=cfg.threads
    )
    if args.fit:
        standardized, stats = features.standardize(raw, None, names)
        stats.save(args.stats)
    else:
        stats = features.FeatureStats.load(args.stats)
        if stats.columns != names:
            raise ConfigError(
                f"stats file {args.stats} was fitted for columns {stats.columns}, "
                f"expected {names}"
            )
        standardized, _ = features.standardize(raw, stats)
    extras = dict(cloud.extras)
    for column, name in enumerate(names):
        extras[name] = standardized[:, column]
    io.write_csv(cloud.replace(extras=extras), args.output)
    _echo(cfg, args.output, "features")
    return EXIT_OK


def cmd_transfer(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(knn_k=args.k, drop_unknown=args.drop_unknown)
    target = io.parse_csv(args.target)
    reference = io.parse_csv(args.reference)
    out = labeling.knn_transfer(
        target,
        reference,
        labeling.LabelTransferConfig(k=cfg.knn_k, drop_unknown=cfg.drop_unknown),
    )
    io.write_csv(out, args.output)
    _echo(cfg, args.output, "transfer")
    return EXIT_OK


def cmd_split(args, cfg: PipelineConfig) -> int:
    cloud = io.parse_csv(args.input)
    assignment = None
    if args.tree_id_list:
        table = pd.read_csv(args.tree_id_list)
        if not {"tree_id", "split"} <= set(table.columns):
            raise ConfigError(
                f"{args.tree_id_list} must have tree_id and split columns"
            )
        assignment = {
            int(row.tree_id): str(row.split) for row in table.itertuples()
        }
    train, val, test = labeling.split_by_tree(
        cloud, args.counts, seed=cfg.seed, assignment=assignment
    )
    prefix = Path(args.out_prefix)
    prefix.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("val", val), ("test", test)):
        io.write_csv(part, prefix / f"{name}.csv")
    _echo(cfg, prefix, "split")
    return EXIT_OK


def _component_rows(cloud: io.PointCloud, include_residuals: bool):
    """Yield (component_id, file-row indices in geodesic order)."""
    component_id = cloud.extras["component_id"].astype(np.int64)
    order = cloud.extras["gvd_order"].astype(np.int64)
    residual = cloud.extras.get("residual")
    keep = np.ones(len(cloud), dtype=bool)
    if residual is not None and not include_residuals:
        keep = residual == 0
    for cid in np.unique(component_id[keep]):
        rows = np.flatnonzero(keep & (component_id == cid))
        yield int(cid), rows[np.argsort(order[rows], kind="stable")]


def cmd_batch(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(batch_size=args.batch_size, radii=args.radii)
    cloud = io.parse_csv(args.input)
    names = features.feature_column_names(cfg.radii)
    _require_columns(cloud, names + ["component_id", "gvd_order"], args.input)
    feature_matrix = np.column_stack([cloud.extras[n] for n in names])
    labels = (
        cloud.label
        if cloud.label is not None
        else np.full(len(cloud), -1, dtype=np.int64)
    )
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    ordinal = 0
    for cid, rows in _component_rows(cloud, args.include_residuals):
        for batch in batching.make_batches(
            cid,
            cloud.xyz[rows],
            feature_matrix[rows],
            labels[rows],
            rows,
            seed=cfg.seed,
            batch_size=cfg.batch_size,
        ):
            batching.write_batch_csv(
                batch, out_dir / batching.batch_file_name(ordinal), names
            )
            ordinal += 1
    if ordinal == 0:
        raise ValueError(f"no components produced batches from {args.input}")
    _echo(cfg, out_dir, "batch")
    return EXIT_OK


def cmd_train(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(
        learning_rate=args.lr,
        epochs=args.epochs,
        double_every=args.double_every,
        max_step_batches=args.cap,
        initial_step_batches=args.initial_step_batches,
        dropout=args.dropout,
        hidden=args.hidden,
        focal_gamma=args.focal_gamma,
        focal_alpha=args.focal_alpha,
    )
    train_batches = batching.load_batch_dir(args.batches)
    val_batches = batching.load_batch_dir(args.val)
    for batch in train_batches + val_batches:
        bad = ~np.isin(batch.labels, (0, 1))
        if bad.any():
            raise ValueError(
                "training/validation batches must be fully labeled with {0, 1}"
            )
    ckpt_dir = Path(args.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    train_cfg = classifier.TrainConfig(
        hidden=cfg.hidden,
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        initial_step_batches=cfg.initial_step_batches,
        double_every=cfg.double_every,
        max_step_batches=cfg.max_step_batches,
        dropout=cfg.dropout,
        seed=cfg.seed,
        checkpoint_every=args.checkpoint_every,
        checkpoint_dir=str(ckpt_dir),
    )
    loss = classifier.LossSpec(
        kind={"ce": "cross_entropy"}.get(args.loss, args.loss),
        focal_gamma=cfg.focal_gamma,
        focal_alpha=cfg.focal_alpha,
    )
    model, log = classifier.train(train_batches, val_batches, train_cfg, loss)
    model.save(
        ckpt_dir / f"epoch_{cfg.epochs:05d}.csv", seed=cfg.seed, epoch=cfg.epochs
    )
    log.to_csv(ckpt_dir / "train_log.csv", index=False)
    _echo(cfg, ckpt_dir, "train")
    return EXIT_OK


def cmd_predict(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(batch_size=args.batch_size, radii=args.radii)
    model = classifier.ClassifierModel.load(args.model)
    cloud = io.parse_csv(args.input)
    names = features.feature_column_names(cfg.radii)
    _require_columns(cloud, names + ["component_id", "gvd_order"], args.input)
    feature_matrix = np.column_stack([cloud.extras[n] for n in names])
    placeholder = np.zeros(len(cloud), dtype=np.int64)
    all_batches = []
    for cid, rows in _component_rows(cloud, include_residuals=True):
        all_batches.extend(
            batching.make_batches(
                cid,
                cloud.xyz[rows],
                feature_matrix[rows],
                placeholder[rows],
                rows,
                seed=cfg.seed,
                batch_size=cfg.batch_size,
            )
        )
    wood_probability, labels = classifier.predict_batches(
        model, all_batches, len(cloud)
    )
    extras = dict(cloud.extras)
    extras["p_wood"] = wood_probability
    out = cloud.replace(extras=extras, label=labels)
    io.write_csv(out, args.output)
    _echo(cfg, args.output, "predict")
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    truth = io.parse_csv(args.truth)
    predicted = io.parse_csv(args.pred)
    if len(truth) != len(predicted):
        raise ValueError(
            f"length mismatch: truth has {len(truth)} points, "
            f"prediction has {len(predicted)}"
        )
    if truth.label is None or predicted.label is None:
        raise ValueError("both files need a label column")
    rows = []

    def report(group: str, mask: np.ndarray) -> None:
        counts = metrics.confusion(truth.label[mask], predicted.label[mask])
        for key, value in metrics.summary(counts).items():
            rows.append((group, key, value))
        rows.append((group, "mcc", metrics.mcc(counts)))
        scores = predicted.extras.get("p_wood")
        if scores is not None:
            try:
                rows.append((group, "auroc", metrics.auroc(truth.label[mask], scores[mask])))
            except ValueError:
                pass
        for key in ("tp", "tn", "fp", "fn"):
            rows.append((group, key, getattr(counts, key)))

    everything = np.ones(len(truth), dtype=bool)
    report("all", everything)
    if args.group_by == "tree_id":
        if truth.tree_id is None:
            raise ValueError("--group-by tree_id needs a tree_id column in the truth file")
        for tree in np.unique(truth.tree_id):
            report(f"tree_{tree}", truth.tree_id == tree)
    pd.DataFrame(rows, columns=["group", "metric", "value"]).to_csv(
        args.report, index=False
    )
    _echo(cfg, args.report, "eval")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leafwood",
        description="Leaf/wood segmentation pipeline for sparse forest LiDAR",
    )
    parser.add_argument("--config", help="JSON config file (see 'leafwood config')")
    parser.add_argument("--seed", type=int, help="global RNG seed")
    parser.add_argument("--threads", type=int, help="worker threads where supported")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", help="print or write the effective config")
    p.add_argument("--output")
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("synth", help="generate a labeled synthetic forest")
    p.add_argument("--trees", type=int, default=50)
    p.add_argument("--points-per-tree", type=int, default=1000)
    p.add_argument("--wood-fraction", type=float, default=0.05)
    p.add_argument("--branches-per-tree", type=int, default=3)
    p.add_argument("--trunk-height", type=_pair, default=(3.0, 6.0))
    p.add_argument("--trunk-radius", type=_pair, default=(0.08, 0.15))
    p.add_argument("--crown-radii", type=_pair, default=(1.0, 2.0))
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--spacing", type=float, default=4.0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse, quality-filter and subsample a cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--ply", action="store_true", help="input is ascii PLY")
    p.add_argument("--min-intensity-db", type=float, default=None)
    p.add_argument(
        "--max-deviation",
        type=float,
        required=True,
        help="deviation cutoff; required because no published default exists",
    )
    p.add_argument("--precision", type=float, default=None)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gvd", help="voxelize and decompose into components")
    p.add_argument("--input", required=True)
    p.add_argument("--voxel-size", type=float, default=None)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--min-voxels", type=int, default=None)
    p.add_argument("--min-points", type=int, default=None)
    p.add_argument("--connectivity", type=int, default=None, choices=(6, 18, 26))
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_gvd)

    p = sub.add_parser("features", help="append multi-scale geometric features")
    p.add_argument("--input", required=True)
    p.add_argument("--radii", type=_floats, default=None)
    p.add_argument("--stats", required=True, help="standardization stats CSV")
    p.add_argument(
        "--fit",
        action="store_true",
        help="fit stats on this input (training split) instead of reading them",
    )
    p.add_argument(
        "--linearity-denominator", choices=("lambda3", "lambda1"), default=None
    )
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("transfer", help="KNN label transfer from a reference cloud")
    p.add_argument("--target", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument(
        "--drop-unknown",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="remove points that end up labeled unknown",
    )
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("split", help="train/val/test split by whole trees")
    p.add_argument("--input", required=True)
    p.add_argument("--counts", type=_ints, required=True, help="train,val,test")
    p.add_argument("--tree-id-list", help="CSV with tree_id,split to pin a split")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("batch", help="normalize components and emit fixed-size batches")
    p.add_argument("--input", required=True)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--radii", type=_floats, default=None)
    p.add_argument("--include-residuals", action="store_true")
    p.add_argument("--output", required=True, help="output directory")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("train", help="train the point classifier")
    p.add_argument("--batches", required=True)
    p.add_argument("--val", required=True)
    p.add_argument(
        "--loss", choices=("rebalanced", "focal", "ce", "cross_entropy"),
        default="rebalanced",
    )
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--double-every", type=int, default=None)
    p.add_argument("--cap", type=int, default=None)
    p.add_argument("--initial-step-batches", type=int, default=None)
    p.add_argument("--hidden", type=_ints, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--focal-gamma", type=float, default=None)
    p.add_argument("--focal-alpha", type=float, default=None)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--checkpoint-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-point wood probabilities and labels")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--radii", type=_floats, default=None)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="imbalance-aware evaluation report")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--group-by", choices=("tree_id",), default=None)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
    except (ConfigError, OSError, ValueError) as error:
        print(f"leafwood: configuration error: {error}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, cfg)
    except ConfigError as error:
        print(f"leafwood {args.command}: configuration error: {error}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as error:  # noqa: BLE001 - stage boundary
        print(f"leafwood {args.command}: stage failed: {error}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
