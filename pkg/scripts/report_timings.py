#!/usr/bin/env python3
"""Wall-clock timings of each pipeline stage on this machine.

Measures corpus generation, feature extraction, training, and per-video
inference at desk scale; prints one line per stage.
"""

import argparse
import time
from pathlib import Path

from rqvqa.features import ExtractionConfig, toy_registry
from rqvqa.fusion import TrainConfig, train, video_forward
from rqvqa.harness import load_bundles, split
from rqvqa.synthetic import make_synthetic_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", required=True)
    ap.add_argument("--n-videos", type=int, default=200)
    args = ap.parse_args()

    registry = toy_registry()
    extraction = ExtractionConfig(gms_grid_count=4, gms_patch_size=8,
                                  gms_seed=0)

    t0 = time.perf_counter()
    manifest = make_synthetic_corpus(Path(args.workdir) / "corpus",
                                     args.n_videos, seed=1)
    t_gen = time.perf_counter() - t0

    t0 = time.perf_counter()
    dataset = load_bundles(manifest, registry, extraction)
    t_feat = time.perf_counter() - t0

    plan = split(manifest, seed=0)
    by_id = {rec.video_id: pair for rec, pair in
             zip(manifest.records, dataset)}
    train_set = [by_id[v] for v in plan.train_ids]
    cfg = TrainConfig(learning_rate=1e-4, batch_size=6, epochs=30, hidden=512)
    t0 = time.perf_counter()
    result = train(train_set, registry, cfg)
    t_train = time.perf_counter() - t0

    t0 = time.perf_counter()
    for v in plan.test_ids:
        video_forward(by_id[v][0], result.head)
    t_infer = (time.perf_counter() - t0) / len(plan.test_ids)

    print(f"corpus generation   {t_gen:8.2f} s  ({args.n_videos} videos)")
    print(f"feature extraction  {t_feat:8.2f} s  "
          f"({t_feat / len(manifest) * 1e3:.1f} ms/video)")
    print(f"training            {t_train:8.2f} s  "
          f"({result.trace.steps} steps)")
    print(f"inference           {t_infer * 1e3:8.2f} ms/video "
          f"(features precomputed)")


if __name__ == "__main__":
    main()
