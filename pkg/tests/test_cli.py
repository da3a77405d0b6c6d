import json
import os

import numpy as np
import pytest

from pscgl.cli import (
    build_run_grid,
    check_gradients,
    load_records,
    main,
    run_config,
    sparsify_directory,
    summarize,
    write_report,
)
from pscgl.config import load_config
from pscgl.data import load_tudataset, save_tudataset
from pscgl.errors import ConfigError, NoDataError
from pscgl.synth import make_corpus

BASE_CONFIG = """
# minimal sweep
dataset.path = {path}
dataset.name = demo
dataset.feature_kind = continuous
methods = {methods}
budgets = {budgets}
ratios = 0.0
alpha = {alpha}
perturb.sigma = 0.8
perturb.samples = 2
train.epochs = 2
train.batch_size = 8
seeds = {seeds}
output_dir = {out}
parallelism = 1
"""


def write_config(tmp_path, **kw):
    data_dir = tmp_path / "data"
    if not data_dir.exists():
        ds = make_corpus(n_classes=4, per_class=12, feature_dim=5, seed=50, node_range=(5, 10))
        save_tudataset(ds, str(data_dir), "DEMO")
    args = dict(path=data_dir, methods="finetune, pscgl", budgets="3",
                alpha="auto", seeds="123", out=tmp_path / "results")
    args.update(kw)
    cfg_path = tmp_path / "exp.cfg"
    cfg_path.write_text(BASE_CONFIG.format(**args), encoding="utf-8")
    return str(cfg_path)


class TestConfig:
    def test_parses_and_defaults(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg.methods == ["finetune", "pscgl"]
        assert cfg.epochs == 2
        assert cfg.learning_rate == 0.001  # default
        assert cfg.seeds == [123]

    def test_alpha_auto_schedule(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg.resolve_alpha(10) == 0.1
        assert cfg.resolve_alpha(20) == 0.1
        assert cfg.resolve_alpha(30) == 0.2

    def test_alpha_auto_binary_is_point_two(self, tmp_path):
        path = write_config(tmp_path)
        text = open(path).read().replace("continuous", "binary")
        open(path, "w").write(text)
        cfg = load_config(path)
        assert cfg.resolve_alpha(10) == 0.2

    def test_unknown_key_rejected_with_name(self, tmp_path):
        path = write_config(tmp_path)
        with open(path, "a") as fh:
            fh.write("trian.epochs = 3\n")
        with pytest.raises(ConfigError, match="trian.epochs"):
            load_config(path)

    def test_missing_required_key_named(self, tmp_path):
        path = write_config(tmp_path)
        text = "\n".join(l for l in open(path).read().splitlines() if not l.startswith("methods"))
        open(path, "w").write(text)
        with pytest.raises(ConfigError, match="methods"):
            load_config(path)

    def test_unknown_method_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="ewc"):
            load_config(write_config(tmp_path, methods="ewc"))

    def test_output_root_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PSCGL_OUTPUT_ROOT", str(tmp_path / "elsewhere"))
        cfg = load_config(write_config(tmp_path))
        assert cfg.output_dir == str(tmp_path / "elsewhere")


class TestGrid:
    def test_single_method_single_seed_is_one_run(self, tmp_path):
        cfg = load_config(write_config(tmp_path, methods="pscgl"))
        assert len(build_run_grid(cfg)) == 1

    def test_buffer_free_methods_collapse_budget_axis(self, tmp_path):
        cfg = load_config(write_config(tmp_path, methods="finetune, random", budgets="3, 5"))
        runs = build_run_grid(cfg)
        assert sum(1 for r in runs if r["method"] == "finetune") == 1
        assert sum(1 for r in runs if r["method"] == "random") == 2


class TestRunAndReport:
    def test_end_to_end_records_and_report(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        paths = run_config(cfg, echo=lambda *a: None)
        assert len(paths) == 2
        records = load_records(cfg.output_dir)
        runs = [r for r in records if r["record"] == "run"]
        tasks = [r for r in records if r["record"] == "task"]
        assert len(runs) == 2
        assert len(tasks) == 4  # 2 methods x 2 tasks
        summary = write_report(cfg.output_dir, echo=lambda *a: None)
        assert "demo" in summary
        assert os.path.exists(os.path.join(cfg.output_dir, "summary.txt"))
        assert os.path.exists(os.path.join(cfg.output_dir, "summary.json"))

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = load_config(write_config(tmp_path, methods="pscgl"))
        (path,) = run_config(cfg, echo=lambda *a: None)
        first = open(path, "rb").read()
        (path2,) = run_config(cfg, echo=lambda *a: None)
        assert path2 == path
        assert open(path, "rb").read() == first

    def test_report_mean_std_formatting(self, tmp_path):
        out = tmp_path / "records"
        out.mkdir()
        aps = [0.4, 0.5, 0.45, 0.42, 0.48]
        for seed, ap in enumerate(aps):
            rec = {"record": "task", "dataset": "demo", "method": "pscgl", "budget": 10,
                   "ratio": 0.0, "alpha": 0.1, "seed": seed, "task_index": 1,
                   "accuracy_row": [ap], "ap": ap, "af": None}
            (out / f"demo__pscgl__b10__r0__s{seed}.jsonl").write_text(json.dumps(rec) + "\n")
        summary = summarize(load_records(str(out)))
        row = summary["demo"]["ap_af"][0]
        # sample std: sum of squared deviations 0.0068 over n-1=4
        assert row["ap"] == "45.00 ± 4.12"
        assert row["single_seed"] is False

    def test_single_seed_std_zero_flagged(self, tmp_path):
        out = tmp_path / "records"
        out.mkdir()
        rec = {"record": "task", "dataset": "demo", "method": "mc", "budget": 10,
               "ratio": 0.0, "alpha": 0.0, "seed": 1, "task_index": 1,
               "accuracy_row": [0.5], "ap": 0.5, "af": None}
        (out / "demo__mc__b10__r0__s1.jsonl").write_text(json.dumps(rec) + "\n")
        summary = summarize(load_records(str(out)))
        row = summary["demo"]["ap_af"][0]
        assert row["ap"] == "50.00 ± 0.00"
        assert row["single_seed"] is True

    def test_mixed_datasets_grouped(self, tmp_path):
        out = tmp_path / "records"
        out.mkdir()
        for ds in ("alpha", "beta"):
            rec = {"record": "task", "dataset": ds, "method": "mc", "budget": 10,
                   "ratio": 0.0, "alpha": 0.0, "seed": 1, "task_index": 1,
                   "accuracy_row": [0.5], "ap": 0.5, "af": None}
            (out / f"{ds}__mc__b10__r0__s1.jsonl").write_text(json.dumps(rec) + "\n")
        summary = summarize(load_records(str(out)))
        assert sorted(summary) == ["alpha", "beta"]

    def test_empty_results_dir_raises(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        with pytest.raises(NoDataError):
            load_records(str(empty))


class TestCommands:
    def test_sparsify_command_halves_nodes(self, tmp_path):
        ds = make_corpus(n_classes=2, per_class=4, feature_dim=4, seed=51, node_range=(6, 10))
        src = tmp_path / "src"
        dst = tmp_path / "dst"
        save_tudataset(ds, str(src), "SP")
        count = sparsify_directory(str(src), str(dst), 0.5)
        assert count == 8
        back = load_tudataset(str(dst), "continuous")
        for orig, pruned in zip(ds.graphs, back.graphs):
            assert pruned.node_count == -(-orig.node_count // 2)

    def test_check_gradients_function(self):
        worst = check_gradients(instances=2, echo=lambda *a: None)
        assert worst < 1e-4

    def test_make_data_cli(self, tmp_path):
        rc = main(["make-data", str(tmp_path / "corpus"), "--classes", "2",
                   "--per-class", "4", "--feature-dim", "3", "--seed", "9"])
        assert rc == 0
        ds = load_tudataset(str(tmp_path / "corpus"), "continuous")
        assert len(ds.graphs) == 8

    def test_cli_error_paths(self, tmp_path, capsys):
        assert main(["report", str(tmp_path / "missing")]) == 2
        assert "error:" in capsys.readouterr().err
