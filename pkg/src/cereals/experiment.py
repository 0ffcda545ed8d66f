"""Experiment driver: the outer active-learning loop.

Per repetition: seed the pool, then loop {retrain from scratch, evaluate,
record a curve point, score the unlabeled pool, select a batch, annotate,
commit} until the pool is exhausted, the round cap is hit, or (optionally)
the 95% target is reached. Every round checkpoints the pool so an aborted
repetition resumes deterministically: all per-round randomness derives from
(rng_seed, repetition, round).
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .acquisition import (
    STRATEGY_IMAGE_RANDOM,
    STRATEGY_IMAGE_SCORE,
    STRATEGY_REGION_RANDOM,
    STRATEGY_REGION_SCORE,
    Batch,
    pixel_budget,
    random_regions,
    score_images,
    select_batch,
    top_images,
)
from .config import ExperimentConfig
from .cost import COST_MODE_ORACLE, cost_training_targets, predict_cost_map
from .dataset import Dataset, load_dataset
from .dmt import write_dmt
from .errors import ConfigError, LearnerError
from .geometry import Region
from .info_measures import entropy_map, vote_entropy_map
from .learners import BuiltinLearner, Learner, LearnerConfig, derive_seed, make_learner
from .metrics import (
    ALCurve,
    CurvePoint,
    average_curves,
    compute_miou,
    performance_index,
    read_curve_csv,
    write_curve_csv,
)
from .oracle import annotate
from .pool import PoolState, commit_regions, load_pool, save_pool, seed_image_ids, seed_pool
from .region_engine import anchor_validity, box_aggregate, fuse, nms_per_image, normalize_corpus

log = logging.getLogger(__name__)

REFERENCE_SEED = 20_000_101


# -- prediction helpers -----------------------------------------------------


def predicted_labels(learner: Learner, record) -> np.ndarray:
    if isinstance(learner, BuiltinLearner):
        return learner.predict_seg_labels(record)
    return np.argmax(learner.predict_probs(record).values, axis=0)


def eval_miou(learner: Learner, dataset: Dataset) -> float:
    pairs = (
        (predicted_labels(learner, dataset.image(i)), dataset.image(i).gt_labels)
        for i in sorted(dataset.val_ids)
    )
    return compute_miou(pairs, dataset.num_classes)


def info_map_for(learner: Learner, record, measure: str) -> np.ndarray:
    if measure == "VOTE_ENTROPY":
        return vote_entropy_map(learner.predict_committee(record))
    return entropy_map(learner.predict_probs(record))


# -- reference run -----------------------------------------------------------


def reference_fingerprint(dataset: Dataset, learner_config: LearnerConfig) -> str:
    import hashlib

    blob = json.dumps(
        {"dataset": dataset.fingerprint(), "learner": learner_config.to_json(), "seed": REFERENCE_SEED},
        sort_keys=True,
    ).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_reference(
    dataset: Dataset,
    learner_config: LearnerConfig,
    *,
    use_cache: bool = True,
    workdir: str | Path | None = None,
) -> dict:
    """Converged validation mIoU when training on the fully labeled train
    split; cached by dataset+learner fingerprint next to the dataset."""
    fingerprint = reference_fingerprint(dataset, learner_config)
    cache_path = Path(dataset.root) / "cache" / f"reference_{fingerprint}.json"
    if use_cache and cache_path.is_file():
        with open(cache_path) as fh:
            return json.load(fh)
    pool = seed_pool(dataset, n=len(dataset.train_ids), rng_seed=REFERENCE_SEED)
    learner = make_learner(learner_config, workdir=_learner_workdir(learner_config, workdir, "reference"))
    try:
        report = learner.train_segmentation(dataset, pool, seed=REFERENCE_SEED)
        miou = eval_miou(learner, dataset)
    finally:
        learner.close()
    result = {
        "p100_miou": miou,
        "epochs_run": report.epochs_run,
        "converged": report.converged,
        "fingerprint": fingerprint,
    }
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    with open(cache_path, "w") as fh:
        json.dump(result, fh, sort_keys=True, indent=2)
    return result


def _learner_workdir(learner_config: LearnerConfig, base: str | Path | None, tag: str):
    if learner_config.kind != "EXTERNAL":
        return None
    base = Path(base) if base else Path("worker_scratch")
    return base / tag


# -- acquisition --------------------------------------------------------------


@dataclass
class RoundArtifacts:
    batch: Batch
    info_maps: dict[str, np.ndarray]
    fused_maps: dict[str, np.ndarray]
    cost_maps: dict[str, np.ndarray]


def unlabeled_image_ids(dataset: Dataset, pool: PoolState) -> list[str]:
    per_image = dataset.pixels_per_image()
    return [i for i in sorted(dataset.train_ids) if pool.labeled_pixels(i) < per_image]


def acquire_batch(
    dataset: Dataset,
    pool: PoolState,
    learner: Learner | None,
    config: ExperimentConfig,
    round_seed: int,
) -> RoundArtifacts:
    acq = config.acquisition
    candidates = unlabeled_image_ids(dataset, pool)
    empty = RoundArtifacts(Batch([], 0, []), {}, {}, {})
    if not candidates:
        return empty

    if acq.strategy == STRATEGY_IMAGE_RANDOM:
        rng = np.random.default_rng(derive_seed(round_seed, "image_random"))
        take = min(acq.m, len(candidates))
        picked = sorted(rng.choice(len(candidates), size=take, replace=False).tolist())
        regions = [
            Region(candidates[i], 0, 0, dataset.height) for i in picked
        ]
        batch = Batch(regions=regions, total_pixels=sum(r.area for r in regions),
                      scores=[0.0] * len(regions))
        return RoundArtifacts(batch, {}, {}, {})

    if acq.strategy == STRATEGY_IMAGE_SCORE:
        info_maps = {
            i: info_map_for(learner, dataset.image(i), acq.measure) for i in candidates
        }
        scores = score_images(info_maps)
        regions = [
            Region(i, 0, 0, dataset.height) for i in top_images(scores, acq.m)
        ]
        batch = Batch(regions=regions, total_pixels=sum(r.area for r in regions),
                      scores=[scores[r.image_id] for r in regions])
        return RoundArtifacts(batch, info_maps, {}, {})

    window = int(acq.region_size)
    if window > min(dataset.height, dataset.width):
        raise ConfigError(f"region_size {window} exceeds image size")
    budget = pixel_budget(dataset, acq.m)

    if acq.strategy == STRATEGY_REGION_RANDOM:
        batch = random_regions(pool, dataset, window, budget, derive_seed(round_seed, "region_random"))
        return RoundArtifacts(batch, {}, {}, {})

    # REGION_SCORE: aggregate, normalize corpus-wide, fuse, NMS, global top-K.
    info_region, valid_masks, info_maps = {}, {}, {}
    cost_region: dict[str, np.ndarray] = {}
    cost_maps: dict[str, np.ndarray] = {}
    scorable = []
    for image_id in candidates:
        valid = anchor_validity(dataset.height, dataset.width, window, pool.regions_for(image_id))
        if not valid.any():
            continue
        scorable.append(image_id)
        valid_masks[image_id] = valid
        info = info_map_for(learner, dataset.image(image_id), acq.measure)
        info_maps[image_id] = info
        info_region[image_id] = box_aggregate(info, window)
        if acq.fusion.uses_cost:
            cmap = predict_cost_map(learner, dataset, image_id, config.cost_mode)
            cost_maps[image_id] = cmap
            cost_region[image_id] = box_aggregate(cmap, window)
    if not scorable:
        return empty
    info_norm = normalize_corpus(info_region, valid_masks)
    cost_norm = normalize_corpus(cost_region, valid_masks) if acq.fusion.uses_cost else {}
    proposals = []
    fused_maps = {}
    for image_id in scorable:
        fused = fuse(info_norm[image_id], cost_norm.get(image_id), acq.fusion)
        fused_maps[image_id] = fused
        proposals.extend(
            nms_per_image(
                fused, image_id, window, pool.regions_for(image_id), dataset.height, dataset.width
            )
        )
    batch = select_batch(proposals, budget)
    return RoundArtifacts(batch, info_maps, fused_maps, cost_maps)


# -- repetition ----------------------------------------------------------------


def _append_jsonl(path: Path, row: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(row, sort_keys=True) + "\n")


def _filter_jsonl(path: Path, max_round_exclusive: int) -> None:
    if not path.is_file():
        return
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip() and json.loads(line)["round"] < max_round_exclusive:
                rows.append(line)
    with open(path, "w") as fh:
        fh.writelines(rows)


def _sum_receipt_clicks(path: Path) -> int:
    total = 0
    if path.is_file():
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    total += row["clicks_interior"] + row["clicks_border"]
    return total


def _dump_maps(dump_dir: str | None, rep: int, rnd: int, maps: dict[str, np.ndarray]) -> None:
    if not dump_dir or not maps:
        return
    out = Path(dump_dir) / f"rep{rep:02d}" / f"round{rnd:03d}"
    out.mkdir(parents=True, exist_ok=True)
    for image_id, values in maps.items():
        write_dmt(out / f"{image_id}.dmt", values.astype(np.float32))


def run_single_repetition(config: ExperimentConfig, rep: int, p100_miou: float) -> dict:
    """Run (or resume) one repetition; returns its summary dict."""
    dataset = load_dataset(config.dataset_dir)
    rep_dir = Path(config.results_dir) / "reps" / f"rep{rep:02d}"
    rep_dir.mkdir(parents=True, exist_ok=True)
    done_path = rep_dir / "done.json"
    if done_path.is_file():
        with open(done_path) as fh:
            return json.load(fh)

    curve_path = rep_dir / "curve.csv"
    pool_path = rep_dir / "pool_state.json"
    acq_log = rep_dir / "acquisitions.jsonl"
    receipt_log = rep_dir / "receipts.jsonl"

    rep_seed = derive_seed(config.rng_seed, "rep", rep)
    if pool_path.is_file():
        pool = load_pool(pool_path, dataset)
        start_round = pool.round_index
        curve = read_curve_csv(curve_path) if curve_path.is_file() else ALCurve()
        curve.points = [p for p in curve.points if p.round < start_round]
        _filter_jsonl(acq_log, start_round)
        _filter_jsonl(receipt_log, start_round)
    else:
        pool = seed_pool(dataset, config.seed_images, rep_seed)
        start_round = 0
        curve = ALCurve()
        for path in (acq_log, receipt_log):
            path.unlink(missing_ok=True)
    seed_ids = seed_image_ids(dataset, config.seed_images, rep_seed)
    seed_clicks = sum(dataset.image(i).vertex_count for i in seed_ids)
    clicks = seed_clicks + _sum_receipt_clicks(receipt_log)

    c100 = dataset.train_vertices()
    p100_pixels = dataset.train_pixels()
    target = 0.95 * p100_miou

    learner = make_learner(
        config.learner,
        workdir=_learner_workdir(config.learner, Path(config.results_dir) / "worker", f"rep{rep:02d}"),
    )
    stop_reason = "max_rounds"
    try:
        for rnd in range(start_round, config.max_rounds + 1):
            round_seed = derive_seed(config.rng_seed, "round", rep, rnd)
            learner.train_segmentation(dataset, pool, seed=round_seed)
            miou = eval_miou(learner, dataset)
            labeled = pool.labeled_pixels()
            curve.points.append(
                CurvePoint(
                    round=rnd,
                    pixel_frac=labeled / p100_pixels,
                    click_frac=clicks / c100,
                    miou=miou,
                )
            )
            write_curve_csv(curve, curve_path)
            save_pool(pool, pool_path)
            log.info(
                "rep %d round %d: pixels %.3f clicks %.3f miou %.4f",
                rep, rnd, labeled / p100_pixels, clicks / c100, miou,
            )
            if config.stop_at_target and miou >= target:
                stop_reason = "target_reached"
                break
            if labeled >= p100_pixels:
                stop_reason = "pool_exhausted"
                break
            if rnd == config.max_rounds:
                break

            needs_cost = (
                config.acquisition.strategy == STRATEGY_REGION_SCORE
                and config.acquisition.fusion.uses_cost
                and config.cost_mode != COST_MODE_ORACLE
            )
            if needs_cost:
                targets = cost_training_targets(pool, dataset)
                learner.train_cost(targets, dataset, seed=derive_seed(round_seed, "cost"))

            artifacts = acquire_batch(dataset, pool, learner, config, round_seed)
            if not artifacts.batch.regions:
                stop_reason = "no_candidates"
                break
            _dump_maps(config.dump.info_maps_dir, rep, rnd, artifacts.info_maps)
            _dump_maps(config.dump.cost_maps_dir, rep, rnd, artifacts.cost_maps)
            _dump_maps(config.dump.region_maps_dir, rep, rnd, artifacts.fused_maps)

            receipts = [
                annotate(region, dataset.image(region.image_id), pool)
                for region in artifacts.batch.regions
            ]
            _append_jsonl(
                acq_log,
                {
                    "round": rnd,
                    "strategy": config.acquisition.strategy,
                    "regions": [
                        {
                            "image_id": r.image_id,
                            "row": r.row,
                            "col": r.col,
                            "size": r.size,
                            "score": s,
                        }
                        for r, s in zip(artifacts.batch.regions, artifacts.batch.scores)
                    ],
                    "total_pixels": artifacts.batch.total_pixels,
                },
            )
            for receipt in receipts:
                _append_jsonl(
                    receipt_log,
                    {
                        "round": rnd,
                        "image_id": receipt.region.image_id,
                        "row": receipt.region.row,
                        "col": receipt.region.col,
                        "size": receipt.region.size,
                        "clicks_interior": receipt.clicks_interior,
                        "clicks_border": receipt.clicks_border,
                    },
                )
            clicks += sum(r.clicks_total for r in receipts)
            pool = commit_regions(pool, dataset, [(r.region, r.labels) for r in receipts])
    except LearnerError:
        log.exception("rep %d aborted by learner failure; checkpoint kept for resume", rep)
        raise
    finally:
        learner.close()

    index = performance_index(curve, p100_miou)
    summary = {
        "rep": rep,
        "rounds": len(curve.points),
        "stop_reason": stop_reason,
        "final_miou": curve.points[-1].miou if curve.points else 0.0,
        "final_pixel_frac": curve.points[-1].pixel_frac if curve.points else 0.0,
        "final_click_frac": curve.points[-1].click_frac if curve.points else 0.0,
        "p95": index["p95"],
        "c95": index["c95"],
        "seed_clicks": seed_clicks,
    }
    with open(done_path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
    return summary


# -- whole experiment ------------------------------------------------------------


def run_experiment(config: ExperimentConfig, progress=None) -> dict:
    """Run all repetitions, average, and write the results directory."""
    config.validate()
    dataset = load_dataset(config.dataset_dir)
    results_dir = Path(config.results_dir)
    results_dir.mkdir(parents=True, exist_ok=True)
    with open(results_dir / "config.json", "w") as fh:
        json.dump(config.to_json(), fh, sort_keys=True, indent=2)

    def report(phase: str, done: int, total: int):
        if progress is not None:
            progress(phase, done, total)

    report("reference", 0, 1)
    reference = run_reference(
        dataset, config.learner, workdir=results_dir / "worker"
    )
    with open(results_dir / "reference.json", "w") as fh:
        json.dump(reference, fh, sort_keys=True, indent=2)
    p100 = reference["p100_miou"]
    report("reference", 1, 1)

    reps = list(range(config.repetitions))
    rep_summaries: dict[int, dict] = {}
    workers = config.parallel_reps or min(os.cpu_count() or 1, 4, len(reps))
    if workers > 1 and len(reps) > 1 and config.learner.kind == "BUILTIN":
        with ProcessPoolExecutor(
            max_workers=workers, mp_context=get_context("spawn")
        ) as pool:
            futures = {
                pool.submit(run_single_repetition, config, rep, p100): rep for rep in reps
            }
            done = 0
            for future in as_completed(futures):
                rep_summaries[futures[future]] = future.result()
                done += 1
                report("repetitions", done, len(reps))
    else:
        for done, rep in enumerate(reps, start=1):
            rep_summaries[rep] = run_single_repetition(config, rep, p100)
            report("repetitions", done, len(reps))

    curves = [
        read_curve_csv(results_dir / "reps" / f"rep{rep:02d}" / "curve.csv") for rep in reps
    ]
    mean_curve = average_curves(curves)
    write_curve_csv(mean_curve, results_dir / "curve_mean.csv")
    index = performance_index(mean_curve, p100)
    summary = {
        "strategy": config.acquisition.strategy,
        "measure": config.acquisition.measure,
        "fusion": config.acquisition.fusion.kind,
        "alpha": config.acquisition.fusion.alpha,
        "region_size": config.acquisition.region_size,
        "cost_mode": config.cost_mode,
        "repetitions": config.repetitions,
        "p100_miou": p100,
        "target_miou": index["target_miou"],
        "p95": index["p95"],
        "c95": index["c95"],
        "per_rep": [rep_summaries[rep] for rep in reps],
    }
    with open(results_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
    if config.plot:
        from .plotting import plot_curves

        plot_curves(curves, mean_curve, p100, results_dir / "curves.svg")
    return summary
