import json

import numpy as np
import pytest

from mitoadapt import cli, dataio
from mitoadapt.morpho import SolidityTrace, TraceEntry


@pytest.fixture()
def dataset_dirs(domain_pair, tmp_path):
    source, target = domain_pair
    src_root = tmp_path / "source"
    tgt_root = tmp_path / "target"
    dataio.save_dataset(source, src_root)
    dataio.save_dataset(target, tgt_root)
    return src_root, tgt_root


def test_preprocess_hm_emits_dataset_and_sidecar(dataset_dirs, tmp_path, capsys):
    src_root, tgt_root = dataset_dirs
    out = tmp_path / "matched"
    rc = cli.main([
        "preprocess", "hm",
        "--source", str(src_root), "--target", str(tgt_root),
        "--direction", "s2t", "--zero-correct", "--out", str(out),
    ])
    assert rc == 0
    matched = dataio.load_dataset(out)
    original = dataio.load_dataset(src_root)
    assert matched.images.data.shape == original.images.data.shape
    assert not np.array_equal(matched.images.data, original.images.data)
    sidecar = json.loads((out / "transform.json").read_text())
    assert sidecar["transform"] == "histogram_match"
    assert sidecar["direction"] == "s2t"
    assert sidecar["zero_correct"] is True


def test_preprocess_hm_t2s_direction(dataset_dirs, tmp_path):
    src_root, tgt_root = dataset_dirs
    out = tmp_path / "matched-t2s"
    cli.main([
        "preprocess", "hm",
        "--source", str(src_root), "--target", str(tgt_root),
        "--direction", "t2s", "--out", str(out),
    ])
    matched = dataio.load_dataset(out)
    target = dataio.load_dataset(tgt_root)
    assert matched.images.data.shape == target.images.data.shape


def test_preprocess_clahe(dataset_dirs, tmp_path):
    src_root, _ = dataset_dirs
    out = tmp_path / "clahe"
    rc = cli.main(["preprocess", "clahe", "--input", str(src_root), "--out", str(out)])
    assert rc == 0
    sidecar = json.loads((out / "transform.json").read_text())
    assert sidecar["transform"] == "clahe"
    assert sidecar["clip_limit"] == 2.0
    assert dataio.load_dataset(out).images.data.shape == \
        dataio.load_dataset(src_root).images.data.shape


def test_select_model_prints_epoch(tmp_path, capsys):
    trace = SolidityTrace(objective_solidity=0.8)
    trace.append(TraceEntry(1, target_solidity=0.4, source_val_iou=0.3))
    trace.append(TraceEntry(2, target_solidity=0.75, source_val_iou=0.6))
    trace.append(TraceEntry(3, target_solidity=0.5, source_val_iou=0.5))
    path = tmp_path / "trace.json"
    trace.save_json(path)
    assert cli.main(["select-model", "--trace", str(path), "--criterion", "solidity"]) == 0
    assert capsys.readouterr().out.strip() == "2"
    cli.main(["select-model", "--trace", str(path), "--criterion", "source_val"])
    assert capsys.readouterr().out.strip() == "2"
    cli.main(["select-model", "--trace", str(path), "--criterion", "last_epoch"])
    assert capsys.readouterr().out.strip() == "3"


def test_train_baseline_with_plan_toml(dataset_dirs, tmp_path):
    src_root, tgt_root = dataset_dirs
    plan_path = tmp_path / "plan.toml"
    plan_path.write_text(
        "rng_seed = 1\n"
        "\n"
        "[network]\n"
        'variant = "attention_unet"\n'
        "depth = 2\n"
        "base_filters = 8\n"
        "\n"
        "[sampler]\n"
        "patch_size = 32\n"
        "count = 8\n"
        "val_fraction = 0.25\n"
        "rng_seed = 3\n"
        "\n"
        "[[phases]]\n"
        'name = "baseline"\n'
        "epochs = 2\n"
        'task = "segmentation"\n'
        'optimizer = "adam"\n'
        'lr_policy = "one_cycle"\n'
        "max_lr = 1e-3\n"
        'data = "source"\n'
        "record_trace = true\n"
    )
    out = tmp_path / "run"
    rc = cli.main([
        "train-baseline", "--config", str(plan_path),
        "--source", str(src_root), "--target", str(tgt_root),
        "--out", str(out),
    ])
    assert rc == 0
    trace = SolidityTrace.load_json(out / "trace.json")
    assert len(trace.entries) == 2
    jsonl = (out / "trace.jsonl").read_text().strip().splitlines()
    assert len(jsonl) == 2
    assert json.loads(jsonl[0])["epoch"] == 1
    assert (out / "history.json").exists()
    assert list(out.glob("ckpt_baseline_*.bin"))
    manifest = json.loads(next(out.glob("ckpt_baseline_*.json")).read_text())
    assert manifest["spec"]["depth"] == 2


def test_train_ynet_requires_target(dataset_dirs, tmp_path):
    src_root, _ = dataset_dirs
    with pytest.raises(SystemExit):
        cli.main(["train-ynet", "--source", str(src_root), "--out", str(tmp_path / "x")])


def test_experiment_run_end_to_end(dataset_dirs, tmp_path, capsys):
    src_root, tgt_root = dataset_dirs
    grid_path = tmp_path / "grid.toml"
    grid_path.write_text(
        "[grid]\n"
        'methods = ["baseline"]\n'
        'pairs = [["src", "tgt"]]\n'
        "repeats = 1\n"
        "seed_base = 0\n"
        "depth = 2\n"
        "base_filters = 8\n"
        "patch_size = 32\n"
        "patch_count = 8\n"
        "val_fraction = 0.25\n"
        "baseline_epochs = 1\n"
        "baseline_max_lr = 1e-3\n"
        "\n"
        "[datasets]\n"
        f'src = "{src_root}"\n'
        f'tgt = "{tgt_root}"\n'
    )
    out = tmp_path / "results"
    rc = cli.main(["experiment", "run", "--config", str(grid_path),
                   "--out", str(out), "--no-plots"])
    assert rc == 0
    assert (out / "table.csv").exists()
    assert list((out / "runs").glob("*.json"))
    assert (out / "trace_summary.csv").exists()
