"""
The command-line pipeline end to end
====================================

Equivalent shell session:

    soprank gen-bench --config run.json --out bench
    soprank train --config run.json --bench bench --out train
    soprank rank --config run.json --bench bench --checkpoint train/best.ckpt --out rank
    soprank eval --ranked rank/ranked.json --truth bench --out eval
    soprank distance --train-policies ... --test-policies ... --data bench/data.jsonl --out dist

Sizes here are tiny so the script runs in seconds.
"""

import json
import tempfile
from pathlib import Path

from soprank.cli import main

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    cfg = tmp / "run.json"
    cfg.write_text(json.dumps({
        "seed": 1,
        "bench": {"n_policies": 12, "split": [6, 3, 3], "n_rollouts": 20, "n_trajectories": 30},
        "scorer": {"K": 4},
        "train": {"subset_size": 64, "n_subsets": 4, "epochs": 2},
    }))
    c = ["--config", str(cfg)]
    main(["gen-bench", *c, "--out", str(tmp / "bench")])
    main(["train", *c, "--bench", str(tmp / "bench"), "--out", str(tmp / "train")])
    main(["rank", *c, "--bench", str(tmp / "bench"), "--checkpoint", str(tmp / "train" / "best.ckpt"),
          "--out", str(tmp / "rank")])
    main(["eval", "--ranked", str(tmp / "rank" / "ranked.json"), "--truth", str(tmp / "bench"),
          "--out", str(tmp / "eval"), "-k", "1", "-k", "3"])
    pol = tmp / "bench" / "policies"
    main(["distance", "--train-policies", *map(str, sorted(pol.glob("*.json"))[:6]),
          "--test-policies", *map(str, sorted(pol.glob("*.json"))[6:]),
          "--data", str(tmp / "bench" / "data.jsonl"), "--out", str(tmp / "dist")])
    print(sorted(p.name for p in (tmp / "eval").iterdir()))
