#!/usr/bin/env python3
"""Build every desk-scale training artifact the benchmark tests read.

Writes, under artifacts/:

    corpus/                     2000/200/500 synthetic corpus (seed 0)
    drilldown_pretrain.json     3-slot model, fixed-policy phase
    drilldown_joint.json        same model after policy refinement
    rhre_144.json               single-state attention baseline, 144-d state
    hre_48.json / rhre_48.json / rre_48.json / rankfusion_48.json
    metrics/<name>.csv          per-turn test metrics per checkpoint
    training_log.json           wall times, best epochs, headline numbers

Rerunning regenerates everything deterministically (fixed seeds).
"""

import json
import sys
import time
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from slotsearch.evaluate import evaluate_split, mean_episode_reward, write_metrics_csv
from slotsearch.model import TrainConfig, load_checkpoint, save_checkpoint
from slotsearch.scenes import CorpusConfig, load_corpus, make_corpus
from slotsearch.trainer import joint_train, pretrain

ARTIFACTS = ROOT / "artifacts"
CORPUS = ARTIFACTS / "corpus"
METRICS = ARTIFACTS / "metrics"

DESK = dict(pretrain_epochs=60, joint_epochs=30, turns=5, batch_size=32, seed=0)


def ensure_corpus() -> None:
    if (CORPUS / "manifest.json").exists():
        print("corpus already present")
        return
    t0 = time.time()
    make_corpus(CorpusConfig(seed=0), CORPUS)
    print(f"corpus written in {time.time() - t0:.1f}s")


def run(name: str, config: TrainConfig, joint_from: str | None = None) -> dict:
    path = ARTIFACTS / f"{name}.json"
    t0 = time.time()
    if joint_from is None:
        cp = pretrain(config, CORPUS, log=_log(name))
    else:
        base = load_checkpoint(ARTIFACTS / f"{joint_from}.json")
        cp = joint_train(base, config, CORPUS, log=_log(name))
    wall = time.time() - t0
    save_checkpoint(cp, path)

    test = load_corpus(CORPUS / "test.jsonl")
    model = cp.to_model()
    metrics = evaluate_split(model, test)
    METRICS.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(metrics, METRICS / f"{name}.csv")
    final = metrics[-1]
    entry = {
        "name": name,
        "wall_seconds": round(wall, 1),
        "best_epoch": cp.epoch,
        "best_val_metric": max(h["val_metric"] for h in cp.val_history),
        "test_final_r10": final.r10,
        "test_final_r5": final.r5,
        "test_final_r1": final.r1,
        "test_final_mean_rank": final.mean_rank,
        "test_r10_per_turn": [m.r10 for m in metrics],
    }
    if config.model == "drilldown":
        entry["test_mean_episode_reward"] = mean_episode_reward(model, test)
    print(f"[{name}] {wall:.0f}s  best epoch {cp.epoch}  "
          f"final-turn R@10 {final.r10:.3f}")
    return entry


def _log(name):
    def log(msg):
        print(f"  {msg}", flush=True)
    return log


def main() -> int:
    ARTIFACTS.mkdir(exist_ok=True)
    ensure_corpus()
    log_entries = []

    drill = TrainConfig(model="drilldown", slots=3, state_dim=48, embed_dim=32, **DESK)
    log_entries.append(run("drilldown_pretrain", drill))
    log_entries.append(run("drilldown_joint", drill, joint_from="drilldown_pretrain"))
    log_entries.append(run("rhre_144", TrainConfig(
        model="rhre", slots=1, state_dim=144, embed_dim=32, **DESK)))
    for kind in ("hre", "rhre", "rre", "rankfusion"):
        log_entries.append(run(f"{kind}_48", TrainConfig(
            model=kind, slots=1, state_dim=48, embed_dim=32, **DESK)))

    log = {
        "generated_by": "scripts/train_desk_artifacts.py",
        "total_wall_seconds": round(sum(e["wall_seconds"] for e in log_entries), 1),
        "runs": log_entries,
    }
    with open(ARTIFACTS / "training_log.json", "w") as fh:
        json.dump(log, fh, indent=2)
    print(f"total training wall time: {log['total_wall_seconds']:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
