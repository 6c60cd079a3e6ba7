"""Batch pipeline driver.

Subcommands chain through conventional filenames inside the output
directory (scene.txt, model.txt, features.txt, landmarks.csv, ...), so
``gen-scene`` -> ``train`` -> ``evaluate`` -> ``recover`` with one config
reproduces a full experiment. Every run writes a manifest next to its
outputs. Exit codes: 0 success, 1 usage, 2 config/missing input,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig, load_config, merge_overrides, parse_config
from .evaluate import accuracy_curve, distance_scatter, pearson, top1_retrieve
from .files import (
    load_features,
    save_features,
    sha256_file,
    write_csv,
    write_json,
    write_matrix_csv,
)
from .geometry import pairwise_sq_edm
from .landmarks import greedy_sample, threshold_sample
from .plots import (
    save_accuracy_plot,
    save_loss_plot,
    save_matrix_plot,
    save_scatter_plot,
    save_trajectory_plot,
)
from .recovery import recover_trajectory
from .scene import generate_scene, load_scene, save_scene
from .trainer import forward_batch, load_model, save_model, train

__all__ = ["main"]


class UsageError(Exception):
    """Command line could not be parsed."""


class MissingInputError(Exception):
    """A required pipeline input file is absent."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mapfeat", description=__doc__, add_help=True)
    sub = parser.add_subparsers(dest="command", metavar="command")
    commands = {
        "gen-scene": "generate a synthetic scene file",
        "train": "train the embedding model on a scene",
        "embed": "export features for every scene image",
        "landmarks": "select reference landmarks",
        "evaluate": "retrieval accuracy and proportionality diagnostics",
        "recover": "trajectory recovery from masked feature distances",
        "compare": "paired evaluation of a config against an override variant",
    }
    for name, help_text in commands.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="path to the JSON run config")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override every config seed")
        sp.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def _emit_error(category: str, message: str) -> None:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)


def _say(quiet: bool, message: str) -> None:
    if not quiet:
        print(message)


def _apply_seed(cfg: RunConfig, seed) -> RunConfig:
    if seed is None:
        return cfg
    return dataclasses.replace(
        cfg,
        scene=dataclasses.replace(cfg.scene, seed=seed),
        train=dataclasses.replace(cfg.train, seed=seed),
        landmarks=dataclasses.replace(cfg.landmarks, seed=seed),
    )


def _manifest(outdir: Path, command: str, config_path, cfg: RunConfig, outputs) -> None:
    payload = {
        "command": command,
        "config_path": str(config_path),
        "config_sha256": sha256_file(config_path),
        "seeds": {
            "scene": cfg.scene.seed,
            "train": cfg.train.seed,
            "landmarks": cfg.landmarks.seed,
        },
        "versions": {
            "mapfeat": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "outputs": sorted(str(o) for o in outputs),
    }
    write_json(outdir / f"manifest_{command.replace('-', '_')}.json", payload)


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingInputError(f"missing input {path.name} ({hint})")
    return path


def _load_scene(outdir: Path):
    return load_scene(_require(outdir / "scene.txt", "run gen-scene first"))


def _load_model(outdir: Path):
    return load_model(_require(outdir / "model.txt", "run train first"))


def _features(outdir: Path, scene, model):
    """Features for every scene image: from features.txt when present."""
    path = outdir / "features.txt"
    if path.exists():
        ids, feats = load_features(path)
        if not np.array_equal(ids, scene.ids):
            raise ValueError("features.txt ids do not match the scene")
        return feats
    return forward_batch(model, scene.observations)


def _landmark_rows(outdir: Path, scene, cfg: RunConfig):
    """Landmark row indices into the scene, from landmarks.csv when present."""
    path = outdir / "landmarks.csv"
    id_to_row = {int(i): k for k, i in enumerate(scene.ids)}
    if path.exists():
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline()
            if not header.startswith("index"):
                raise ValueError("landmarks.csv: missing index,x,y header")
            for line in fh:
                rows.append(id_to_row[int(line.split(",")[0])])
        return np.array(rows, dtype=int)
    return _select_landmarks(scene, cfg)


def _select_landmarks(scene, cfg: RunConfig) -> np.ndarray:
    opts = cfg.landmarks
    pool = (
        scene.subset_by_condition(opts.conditions) if opts.conditions is not None else scene
    )
    pool_rows = (
        np.flatnonzero(np.isin(scene.ids, pool.ids)) if opts.conditions is not None
        else np.arange(scene.n_images)
    )
    if opts.method == "greedy":
        if opts.count > pool.n_images:
            raise ConfigError(
                f"landmarks.count={opts.count} exceeds pool size {pool.n_images}"
            )
        chosen = greedy_sample(pool.locations, opts.count, seed=opts.seed)
    else:
        chosen = threshold_sample(pool.locations, opts.r_lm)
    return pool_rows[chosen]


def _query_rows(scene, conditions) -> np.ndarray:
    if conditions is None:
        return np.arange(scene.n_images)
    sub = scene.subset_by_condition(conditions)
    return np.flatnonzero(np.isin(scene.ids, sub.ids))


def _tolerance_grid(cfg: RunConfig) -> np.ndarray:
    if cfg.evaluate.tolerances is not None:
        return np.unique(np.asarray(cfg.evaluate.tolerances, dtype=float))
    r1, r2 = cfg.train.r1, cfg.train.r2
    grid = np.linspace(r2 / 20.0, 1.5 * r2, cfg.evaluate.curve_points)
    return np.unique(np.concatenate([grid, [r1, r2]]))


def _evaluate_metrics(scene, feats, landmark_rows, query_rows, cfg: RunConfig):
    """Shared by evaluate and compare: curve, scatter, and summary dict."""
    lm_feats = feats[landmark_rows]
    q_feats = feats[query_rows]
    retrieved = top1_retrieve(q_feats, lm_feats)
    tols = _tolerance_grid(cfg)
    curve = accuracy_curve(
        retrieved, scene.locations[query_rows], scene.locations[landmark_rows], tols
    )
    geo_sq, feat_sq = distance_scatter(q_feats, scene.locations[query_rows])
    keep = geo_sq <= cfg.train.r2 ** 2
    summary = {
        "pearson_all": pearson(feat_sq, geo_sq),
        "pearson_within_r2": pearson(feat_sq[keep], geo_sq[keep]),
        "n_scatter_pairs": int(geo_sq.shape[0]),
        "n_queries": int(query_rows.shape[0]),
        "n_landmarks": int(landmark_rows.shape[0]),
        "accuracy_at_r1": _accuracy_at(curve, cfg.train.r1),
        "accuracy_at_r2": _accuracy_at(curve, cfg.train.r2),
    }
    return retrieved, curve, geo_sq, feat_sq, summary


def _accuracy_at(curve, tolerance: float) -> float:
    k = int(np.argmin(np.abs(curve.tolerances - tolerance)))
    return float(curve.accuracy[k])


def _cmd_gen_scene(args, raw, cfg, outdir: Path):
    scene = generate_scene(cfg.scene)
    save_scene(scene, outdir / "scene.txt")
    _say(args.quiet, f"wrote scene.txt ({scene.n_images} images)")
    return ["scene.txt"]


def _cmd_train(args, raw, cfg, outdir: Path):
    scene = _load_scene(outdir)
    result = train(scene, cfg.train)
    save_model(result.model, outdir / "model.txt")
    write_csv(
        outdir / "loss_log.csv",
        ["iteration", "loss", "nv_component", "vg_component"],
        result.loss_log,
    )
    save_loss_plot(result.loss_log, outdir / "loss_log.png")
    _say(
        args.quiet,
        f"trained: lam={result.lam:.6g}, {result.anchor_visits} anchor visits, "
        f"{result.skipped} skipped, {result.cache_refreshes} cache refreshes",
    )
    return ["model.txt", "loss_log.csv", "loss_log.png"]


def _cmd_embed(args, raw, cfg, outdir: Path):
    scene = _load_scene(outdir)
    model = _load_model(outdir)
    feats = forward_batch(model, scene.observations)
    save_features(outdir / "features.txt", scene.ids, feats)
    _say(args.quiet, f"wrote features.txt ({feats.shape[0]} x {feats.shape[1]})")
    return ["features.txt"]


def _cmd_landmarks(args, raw, cfg, outdir: Path):
    scene = _load_scene(outdir)
    rows = _select_landmarks(scene, cfg)
    write_csv(
        outdir / "landmarks.csv",
        ["index", "x", "y"],
        [
            (int(scene.ids[r]), scene.locations[r, 0], scene.locations[r, 1])
            for r in rows
        ],
    )
    _say(args.quiet, f"wrote landmarks.csv ({len(rows)} landmarks)")
    return ["landmarks.csv"]


def _cmd_evaluate(args, raw, cfg, outdir: Path):
    scene = _load_scene(outdir)
    model = _load_model(outdir)
    feats = _features(outdir, scene, model)
    landmark_rows = _landmark_rows(outdir, scene, cfg)
    if landmark_rows.shape[0] == 0:
        raise ConfigError("no landmarks configured")
    query_rows = _query_rows(scene, cfg.evaluate.query_conditions)
    _, curve, geo_sq, feat_sq, summary = _evaluate_metrics(
        scene, feats, landmark_rows, query_rows, cfg
    )
    write_csv(
        outdir / "accuracy_curve.csv",
        ["tolerance", "accuracy", "upper_bound"],
        zip(curve.tolerances, curve.accuracy, curve.upper_bound),
    )
    write_csv(
        outdir / "scatter.csv",
        ["geo_dist", "feat_dist"],
        zip(np.sqrt(geo_sq), np.sqrt(feat_sq)),
    )
    write_json(outdir / "pearson.json", summary)
    save_accuracy_plot({"model": curve}, outdir / "accuracy_curve.png")
    save_scatter_plot(
        np.sqrt(geo_sq), np.sqrt(feat_sq), outdir / "scatter.png", summary["pearson_all"]
    )
    _say(
        args.quiet,
        f"evaluate: pearson_all={summary['pearson_all']:.4f} "
        f"acc@r1={summary['accuracy_at_r1']:.4f} acc@r2={summary['accuracy_at_r2']:.4f}",
    )
    return [
        "accuracy_curve.csv",
        "scatter.csv",
        "pearson.json",
        "accuracy_curve.png",
        "scatter.png",
    ]


def _cmd_recover(args, raw, cfg, outdir: Path):
    scene = _load_scene(outdir)
    model = _load_model(outdir)
    feats = _features(outdir, scene, model)
    lam = cfg.recover.lam if cfg.recover.lam is not None else model.lam
    if lam is None:
        raise ConfigError("recover.lam is unset and the checkpoint carries no lam")
    query_rows = _query_rows(scene, cfg.recover.query_conditions)
    if query_rows.shape[0] < 3:
        raise ConfigError("recovery needs at least 3 query images")
    gt = scene.locations[query_rows]
    result = recover_trajectory(
        feats[query_rows],
        lam,
        cfg.train.r1,
        ground_truth=gt,
        completion_iters=cfg.recover.completion_iters,
        completion_tol=cfg.recover.completion_tol,
        smacof_iters=cfg.recover.smacof_iters,
        smacof_tol=cfg.recover.smacof_tol,
        with_scale=cfg.recover.with_scale,
    )
    masked_for_csv = np.where(result.masked.M, result.masked.D, np.nan)
    write_matrix_csv(outdir / "edm_masked.csv", masked_for_csv)
    write_matrix_csv(outdir / "edm_completed.csv", result.completed_edm)
    write_matrix_csv(outdir / "edm_true.csv", pairwise_sq_edm(gt))
    ids = scene.ids[query_rows]
    for est, name in ((result.mds_estimate, "mds"), (result.smacof_estimate, "smacof")):
        write_csv(
            outdir / f"trajectory_{name}.csv",
            ["index", "x", "y"],
            [
                (int(ids[k]), est.aligned_points[k, 0], est.aligned_points[k, 1])
                for k in range(len(ids))
            ],
        )
    write_csv(
        outdir / "stress_trace.csv",
        ["iteration", "stress"],
        list(enumerate(result.smacof_estimate.stress_trace)),
    )
    seg = np.linalg.norm(np.diff(gt, axis=0), axis=1)
    path_length = float(seg.sum())
    report = {
        "lam": float(lam),
        "path_length_m": path_length,
        "masked_in_fraction": float(result.masked.M.mean()),
        "completion_objective": result.completion.objective,
        "completion_converged": result.completion.converged,
        "rmse_classical_mds_m": result.mds_estimate.aligned_rmse,
        "rmse_smacof_m": result.smacof_estimate.aligned_rmse,
        "rmse_classical_mds_fraction": result.mds_estimate.aligned_rmse / path_length,
        "rmse_smacof_fraction": result.smacof_estimate.aligned_rmse / path_length,
    }
    write_json(outdir / "recovery.json", report)
    save_trajectory_plot(
        gt,
        {
            "classical MDS": result.mds_estimate.aligned_points,
            "SMACOF": result.smacof_estimate.aligned_points,
        },
        outdir / "trajectory.png",
    )
    save_matrix_plot(
        {
            "masked": masked_for_csv,
            "completed": result.completed_edm,
            "ground truth": pairwise_sq_edm(gt),
        },
        outdir / "edm.png",
    )
    _say(
        args.quiet,
        f"recover: rmse_mds={report['rmse_classical_mds_m']:.3f}m "
        f"rmse_smacof={report['rmse_smacof_m']:.3f}m over {path_length:.1f}m path",
    )
    return [
        "edm_masked.csv",
        "edm_completed.csv",
        "edm_true.csv",
        "trajectory_mds.csv",
        "trajectory_smacof.csv",
        "stress_trace.csv",
        "recovery.json",
        "trajectory.png",
        "edm.png",
    ]


def _run_variant(cfg: RunConfig):
    """Scene -> train -> landmarks -> metrics for one config, in memory."""
    scene = generate_scene(cfg.scene)
    result = train(scene, cfg.train)
    feats = forward_batch(result.model, scene.observations)
    landmark_rows = _select_landmarks(scene, cfg)
    query_rows = _query_rows(scene, cfg.evaluate.query_conditions)
    _, curve, _, _, summary = _evaluate_metrics(scene, feats, landmark_rows, query_rows, cfg)
    return curve, summary


def _cmd_compare(args, raw, cfg, outdir: Path):
    raw_b = merge_overrides(raw, cfg.compare.b_overrides)
    cfg_b = _apply_seed(parse_config(raw_b), args.seed)
    labels = (cfg.compare.label_a, cfg.compare.label_b)
    curves, rows = {}, []
    for label, variant in zip(labels, (cfg, cfg_b)):
        curve, summary = _run_variant(variant)
        curves[label] = curve
        rows.append(
            (
                label,
                summary["pearson_all"],
                summary["pearson_within_r2"],
                summary["accuracy_at_r1"],
                summary["accuracy_at_r2"],
            )
        )
        _say(
            args.quiet,
            f"{label}: pearson_all={summary['pearson_all']:.4f} "
            f"acc@r1={summary['accuracy_at_r1']:.4f} acc@r2={summary['accuracy_at_r2']:.4f}",
        )
    write_csv(
        outdir / "compare.csv",
        ["label", "pearson_all", "pearson_within_r2", "accuracy_at_r1", "accuracy_at_r2"],
        rows,
    )
    save_accuracy_plot(curves, outdir / "compare_accuracy.png")
    return ["compare.csv", "compare_accuracy.png"]


_RUNNERS = {
    "gen-scene": _cmd_gen_scene,
    "train": _cmd_train,
    "embed": _cmd_embed,
    "landmarks": _cmd_landmarks,
    "evaluate": _cmd_evaluate,
    "recover": _cmd_recover,
    "compare": _cmd_compare,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required (see --help)")
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return 1
    try:
        raw, cfg = load_config(args.config)
        cfg = _apply_seed(cfg, args.seed)
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        outputs = _RUNNERS[args.command](args, raw, cfg, outdir)
        _manifest(outdir, args.command, args.config, cfg, outputs)
    except (ConfigError, MissingInputError) as exc:
        _emit_error("config", str(exc))
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        _emit_error("runtime", f"{type(exc).__name__}: {exc}")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
