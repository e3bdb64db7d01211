import json

import pytest

from soprank.cli import main
from soprank.metrics import regret_at_k, spearman

TINY = {
    "seed": 3,
    "bench": {"n_policies": 8, "split": [4, 2, 2], "n_rollouts": 5, "n_trajectories": 10},
    "scorer": {"K": 3, "d_low": 8, "d_high": 16,
               "low": {"n_layers": 1, "n_heads": 2, "d_ff": 16, "dropout": 0.1},
               "high": {"n_layers": 1, "n_heads": 4, "d_ff": 32, "dropout": 0.1}},
    "train": {"subset_size": 32, "n_subsets": 2, "epochs": 2},
    "rank": {"ks": [1, 2]},
}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["gen-bench", "--config", str(cfg), "--out", str(root / "bench")]) == 0
    assert main(["train", "--config", str(cfg), "--bench", str(root / "bench"), "--out", str(root / "train")]) == 0
    return root, cfg


def test_gen_bench_is_byte_identical(run, tmp_path):
    root, cfg = run
    assert main(["gen-bench", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "manifest.json").read_bytes() == (root / "bench" / "manifest.json").read_bytes()
    assert (tmp_path / "data.jsonl").read_bytes() == (root / "bench" / "data.jsonl").read_bytes()
    assert json.loads((tmp_path / "resolved_config.json").read_text())["seed"] == 3
    assert "soprank" in json.loads((tmp_path / "tool_version.json").read_text())


def test_minimum_family(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bench": {"n_policies": 2, "split": [1, 0, 1], "n_rollouts": 2, "n_trajectories": 1}}))
    assert main(["gen-bench", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    m = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert len(m["policies"]) == 2


def test_manifest_returns_match_recomputation(run):
    from soprank.bench import EnvSpec, monte_carlo_return
    from soprank.policy import load_policy

    root, _ = run
    m = json.loads((root / "bench" / "manifest.json").read_text())
    env = EnvSpec.from_json(m["env"])
    for p in m["policies"][:3]:
        mean, _ = monte_carlo_return(env, load_policy(root / "bench" / p["path"]), m["n_rollouts"], seed=m["seed"] + 1)
        assert mean == p["true_return"]


def test_train_outputs(run):
    root, _ = run
    report = json.loads((root / "train" / "train_report.json").read_text())
    assert len(report["losses"]) == 4 and report["best_checkpoint"] == "best.ckpt"
    assert (root / "train" / "resolved_config.json").exists()


def _rank(root, cfg, out, *extra):
    return main(["rank", "--config", str(cfg), "--bench", str(root / "bench"),
                 "--checkpoint", str(root / "train" / "best.ckpt"), "--out", str(out), *extra])


def test_rank_then_eval_recomputes_metrics(run, tmp_path):
    root, cfg = run
    assert _rank(root, cfg, tmp_path / "r", "--svg") == 0
    ranked = json.loads((tmp_path / "r" / "ranked.json").read_text())
    assert len(ranked["policy_ids"]) == 2 and (tmp_path / "r" / "ranked.svg").exists()
    assert main(["eval", "--ranked", str(tmp_path / "r" / "ranked.json"), "--truth", str(root / "bench"),
                 "--out", str(tmp_path / "e"), "-k", "1"]) == 0
    ev = json.loads((tmp_path / "e" / "eval.json").read_text())
    truth = {p["id"]: p["true_return"] for p in json.loads((root / "bench" / "manifest.json").read_text())["policies"]}
    v = [truth[i] for i in ranked["policy_ids"]]
    assert ev["spearman"] == spearman(v, ranked["scores"])
    assert ev["regret_at_k"]["1"] == regret_at_k(v, ranked["scores"], 1)


def test_rank_single_and_duplicate_policy(run, tmp_path):
    root, cfg = run
    p = str(root / "bench" / "policies" / "pi000.json")
    assert _rank(root, cfg, tmp_path / "one", p) == 0
    assert len(json.loads((tmp_path / "one" / "ranked.json").read_text())["scores"]) == 1
    dup = tmp_path / "copy.json"
    dup.write_text((root / "bench" / "policies" / "pi000.json").read_text())
    assert _rank(root, cfg, tmp_path / "two", p, str(dup)) == 0
    s = json.loads((tmp_path / "two" / "ranked.json").read_text())["scores"]
    assert s[0] == s[1]


def test_eval_rejects_unknown_ids(run, tmp_path):
    root, _ = run
    bad = tmp_path / "ranked.json"
    bad.write_text(json.dumps({"policy_ids": ["nope", "pi000"], "scores": [1.0, 0.0]}))
    assert main(["eval", "--ranked", str(bad), "--truth", str(root / "bench" / "manifest.json"),
                 "--out", str(tmp_path / "e")]) == 2


def test_distance(run, tmp_path):
    root, _ = run
    pol = root / "bench" / "policies"
    args = ["distance", "--train-policies", str(pol / "pi000.json"), str(pol / "pi001.json"),
            "--test-policies", str(pol / "pi000.json"), "--data", str(root / "bench" / "data.jsonl"),
            "--out", str(tmp_path)]
    assert main(args) == 0
    assert json.loads((tmp_path / "distance.json").read_text())["distance"] == 0.0


def test_exit_codes(run, tmp_path):
    root, cfg = run
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"seeed": 1}))
    assert main(["gen-bench", "--config", str(bad_cfg), "--out", str(tmp_path)]) == 1
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["rank"])
    assert exc.value.code == 1
    assert main(["rank", "--config", str(cfg), "--bench", str(tmp_path / "missing"),
                 "--checkpoint", "x.ckpt", "--out", str(tmp_path / "o")]) == 2
    corrupt = tmp_path / "c.ckpt"
    corrupt.write_bytes(b"SOPRT001garbage")
    assert main(["rank", "--config", str(cfg), "--bench", str(root / "bench"),
                 "--checkpoint", str(corrupt), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(run, tmp_path):
    root, cfg = run
    # a huge step sends the parameters to ~1e308, so the second forward pass overflows
    big = dict(TINY, train={"subset_size": 32, "n_subsets": 2, "epochs": 1, "lr": 1e308})
    c = tmp_path / "big.json"
    c.write_text(json.dumps(big))
    code = main(["train", "--config", str(c), "--bench", str(root / "bench"), "--out", str(tmp_path / "t")])
    assert code == 3


def test_threads_flag(run, tmp_path):
    root, cfg = run
    assert _rank(root, cfg, tmp_path / "a", "--threads", "1") == 0
    assert _rank(root, cfg, tmp_path / "b") == 0
    assert (tmp_path / "a" / "ranked.json").read_bytes() == (tmp_path / "b" / "ranked.json").read_bytes()
