"""Dataset manifests, split protocols, experiment orchestration, ensembling.

Manifests are UTF-8 CSV with header video_id,path,mos,scene_id. Each path is
a directory holding either a raw video (meta.txt + frames), sidecar .rqvf
files, or both; sidecars take precedence per source.

Seed scheme: split k of a run uses seed master + k, the matching training run
uses master + 100000 + k, so repeated experiments are reproducible and
individually re-runnable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ManifestError
from .features import ExtractionConfig, SourceRegistry, assemble_bundle
from .fusion import (
    ConcatLayout,
    FusionHead,
    TrainConfig,
    TrainResult,
    train,
    video_forward,
)
from .metrics import EvalReport, evaluate
from .preproc import META_NAME, load_raw_video

MANIFEST_HEADER = ["video_id", "path", "mos", "scene_id"]
PREDICTION_HEADER = ["video_id", "score"]

TRAIN_SEED_STRIDE = 100_000


@dataclass(frozen=True)
class ManifestRecord:
    video_id: str
    path: str
    mos: float
    scene_id: str


@dataclass(frozen=True)
class DatasetManifest:
    records: list[ManifestRecord]

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.video_id in seen:
                raise ManifestError(f"duplicate video_id {rec.video_id!r}")
            seen.add(rec.video_id)
            if not math.isfinite(rec.mos):
                raise ManifestError(f"{rec.video_id}: non-finite mos")

    def __len__(self):
        return len(self.records)

    def by_id(self, video_id: str) -> ManifestRecord:
        for rec in self.records:
            if rec.video_id == video_id:
                return rec
        raise ManifestError(f"unknown video_id {video_id!r}")

    def subset(self, ids) -> "DatasetManifest":
        wanted = set(ids)
        return DatasetManifest(
            records=[r for r in self.records if r.video_id in wanted])


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ManifestError(
                f"{path}: header {header} != {MANIFEST_HEADER}")
        records = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 columns")
            try:
                mos = float(row[2])
            except ValueError:
                raise ManifestError(
                    f"{path}:{lineno}: bad mos {row[2]!r}") from None
            records.append(ManifestRecord(row[0], row[1], mos, row[3]))
    return DatasetManifest(records=records)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for rec in manifest.records:
            writer.writerow([rec.video_id, rec.path, repr(float(rec.mos)),
                             rec.scene_id])
    return path


# ---------------------------------------------------------------------------
# Splits


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    ratio: float
    grouping: str


def split(manifest: DatasetManifest, ratio: float = 0.8,
          grouping: str = "by-scene", seed: int = 0) -> SplitPlan:
    """Shuffle groups by seed; the first ceil(ratio * G) groups train."""
    if grouping not in ("by-scene", "by-video"):
        raise ManifestError(f"unknown grouping {grouping!r}")
    if not 0.0 < ratio < 1.0:
        raise ManifestError(f"ratio must be in (0, 1), got {ratio}")
    key = (lambda r: r.scene_id) if grouping == "by-scene" else \
        (lambda r: r.video_id)
    groups: dict[str, list[str]] = {}
    for rec in manifest.records:
        groups.setdefault(key(rec), []).append(rec.video_id)
    names = sorted(groups)
    if len(names) < 2:
        raise ManifestError(
            f"need >= 2 groups to split, got {len(names)} ({grouping})")
    order = np.random.default_rng(seed).permutation(len(names))
    n_train = math.ceil(ratio * len(names))
    train_groups = [names[i] for i in order[:n_train]]
    test_groups = [names[i] for i in order[n_train:]]
    train_ids = tuple(vid for g in train_groups for vid in groups[g])
    test_ids = tuple(vid for g in test_groups for vid in groups[g])
    return SplitPlan(seed=seed, train_ids=train_ids, test_ids=test_ids,
                     ratio=ratio, grouping=grouping)


# ---------------------------------------------------------------------------
# Bundle resolution


def resolve_bundle(record: ManifestRecord, registry: SourceRegistry,
                   extraction: ExtractionConfig):
    """Load pixels and/or sidecars for one manifest record."""
    path = Path(record.path)
    if not path.is_dir():
        raise ManifestError(f"{record.video_id}: path {path} is not a directory")
    video = load_raw_video(path) if (path / META_NAME).is_file() else None
    return assemble_bundle(video, registry, sidecar_dir=path,
                           video_id=record.video_id, extraction=extraction)


def load_bundles(manifest: DatasetManifest, registry: SourceRegistry,
                 extraction: ExtractionConfig):
    """(bundle, mos) pairs in manifest order."""
    return [(resolve_bundle(rec, registry, extraction), rec.mos)
            for rec in manifest.records]


# ---------------------------------------------------------------------------
# Prediction


def predict_scores(head: FusionHead, manifest: DatasetManifest,
                   registry: SourceRegistry,
                   extraction: ExtractionConfig) -> list[tuple[str, float]]:
    """Deterministic per-video scores in manifest order."""
    _check_layout(head.layout, ConcatLayout.from_registry(registry))
    rows = []
    for rec in manifest.records:
        bundle = resolve_bundle(rec, registry, extraction)
        rows.append((rec.video_id, video_forward(bundle, head)))
    return rows


def _check_layout(expected: ConcatLayout, found: ConcatLayout) -> None:
    if expected.entries != found.entries:
        exp = [(e.name, e.dim) for e in expected.entries]
        got = [(e.name, e.dim) for e in found.entries]
        raise CheckpointError(
            f"registry does not match checkpoint layout: expected {exp}, "
            f"found {got}")


def write_predictions(rows, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(PREDICTION_HEADER)]
    lines += [f"{vid},{score:.6f}" for vid, score in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class SplitResult:
    split_seed: int
    train_seed: int
    n_train: int
    n_test: int
    report: EvalReport
    train_result: TrainResult | None = field(repr=False, default=None)


@dataclass
class ExperimentReport:
    rows: list[SplitResult]
    mean_srcc: float
    mean_plcc_raw: float
    mean_plcc_4pl: float


def run_experiment(manifest: DatasetManifest, registry: SourceRegistry,
                   cfg: TrainConfig, repeats: int = 1, *,
                   master_seed: int = 0, ratio: float = 0.8,
                   grouping: str = "by-scene",
                   extraction: ExtractionConfig = ExtractionConfig(),
                   ) -> ExperimentReport:
    """Train/evaluate on `repeats` seeded splits and average the criteria."""
    if repeats < 1:
        raise ManifestError(f"repeats must be >= 1, got {repeats}")
    bundles = {rec.video_id: pair for rec, pair in
               zip(manifest.records, load_bundles(manifest, registry,
                                                  extraction))}
    rows = []
    for k in range(repeats):
        split_seed = master_seed + k
        train_seed = master_seed + TRAIN_SEED_STRIDE + k
        plan = split(manifest, ratio=ratio, grouping=grouping, seed=split_seed)
        train_set = [bundles[v] for v in plan.train_ids]
        result = train(train_set, registry,
                       replace(cfg, seed=train_seed))
        preds = [video_forward(bundles[v][0], result.head)
                 for v in plan.test_ids]
        mos = [bundles[v][1] for v in plan.test_ids]
        report = evaluate(preds, mos)
        rows.append(SplitResult(split_seed=split_seed, train_seed=train_seed,
                                n_train=len(plan.train_ids),
                                n_test=len(plan.test_ids), report=report,
                                train_result=result))
    return ExperimentReport(
        rows=rows,
        mean_srcc=float(np.mean([r.report.srcc for r in rows])),
        mean_plcc_raw=float(np.mean([r.report.plcc_raw for r in rows])),
        mean_plcc_4pl=float(np.mean([r.report.plcc_4pl for r in rows])),
    )


def ensemble_predict(train_manifest: DatasetManifest,
                     registry: SourceRegistry, cfg: TrainConfig,
                     k_splits: int = 10, *,
                     target_manifest: DatasetManifest | None = None,
                     master_seed: int = 0, ratio: float = 0.8,
                     grouping: str = "by-scene", combiner: str = "mean",
                     extraction: ExtractionConfig = ExtractionConfig(),
                     ) -> list[tuple[str, float]]:
    """Train k models on k seeded splits and combine their predictions.

    Scores are produced for target_manifest (default: the training manifest
    itself), combined per video by arithmetic mean or median.
    """
    if k_splits < 2:
        raise ManifestError(f"k_splits must be >= 2, got {k_splits}")
    if combiner not in ("mean", "median"):
        raise ManifestError(f"unknown combiner {combiner!r}")
    target = target_manifest if target_manifest is not None else train_manifest
    train_bundles = {rec.video_id: pair for rec, pair in
                     zip(train_manifest.records,
                         load_bundles(train_manifest, registry, extraction))}
    target_bundles = load_bundles(target, registry, extraction)

    per_model = np.empty((k_splits, len(target.records)))
    for k in range(k_splits):
        plan = split(train_manifest, ratio=ratio, grouping=grouping,
                     seed=master_seed + k)
        subset = [train_bundles[v] for v in plan.train_ids]
        result = train(subset, registry,
                       replace(cfg, seed=master_seed + TRAIN_SEED_STRIDE + k))
        per_model[k] = [video_forward(bundle, result.head)
                        for bundle, _ in target_bundles]
    combined = per_model.mean(axis=0) if combiner == "mean" else \
        np.median(per_model, axis=0)
    return [(rec.video_id, float(s))
            for rec, s in zip(target.records, combined)]
