"""Command-line entry points: run a config sweep, aggregate results, check
gradients, sparsify a dataset directory, and generate synthetic corpora.

Each run writes one JSON-lines record file (atomically, temp-then-rename),
so re-running a config only overwrites its own records and concurrent runs
never interleave.
"""

from __future__ import annotations

import argparse
import functools
import json
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .backdoor import BackdoorSpec
from .config import ExperimentConfig, load_config
from .continual import FINETUNE, JOINT, METHODS, MethodSpec, run_sequence
from .data import Dataset, filter_small_classes, load_tudataset, save_tudataset
from .errors import NoDataError, PscglError
from .perturb import PerturbSpec, select_perturb_param
from .sparsify import sparsify
from .synth import make_corpus

_thread_limiter = None


def _limit_blas_threads():
    global _thread_limiter
    try:
        from threadpoolctl import threadpool_limits

        _thread_limiter = threadpool_limits(1)
    except Exception:
        pass


@functools.lru_cache(maxsize=4)
def _load_dataset(path: str, feature_kind: str, min_class_count: int) -> Dataset:
    ds = load_tudataset(path, feature_kind)
    if min_class_count > 1:
        ds = filter_small_classes(ds, min_class_count)
    return ds


def _record_name(dataset: str, method: str, budget: int, ratio: float, seed: int, backdoor: bool) -> str:
    suffix = "__backdoor" if backdoor else ""
    return f"{dataset}__{method}__b{budget}__r{ratio:g}__s{seed}{suffix}.jsonl"


def build_run_grid(cfg: ExperimentConfig) -> list[dict]:
    """Cross-product of methods x budgets x ratios x seeds.

    Buffer-free methods ignore budget and ratio, so those axes collapse;
    ratios only vary for the pscgl variants.
    """
    runs: list[dict] = []
    seen_keys: set[tuple] = set()
    for method in cfg.methods:
        budgets = [0] if method in (FINETUNE, JOINT) else cfg.budgets
        for budget in budgets:
            ratios = cfg.ratios if method.startswith("pscgl") else [0.0]
            for ratio in ratios:
                for seed in cfg.seeds:
                    key = (method, budget, ratio, seed)
                    if key in seen_keys:
                        continue
                    seen_keys.add(key)
                    runs.append(
                        {
                            "method": method,
                            "budget": budget,
                            "ratio": ratio,
                            "seed": seed,
                            "alpha": cfg.resolve_alpha(budget if budget else max(cfg.budgets, default=10)),
                        }
                    )
    return runs


def _execute_run(cfg: ExperimentConfig, run: dict) -> str:
    dataset = _load_dataset(cfg.dataset_path, cfg.feature_kind, cfg.min_class_count)
    budget = run["budget"] if run["budget"] else 10  # unused by finetune/joint
    spec = MethodSpec(
        method=run["method"],
        budget=budget,
        sparsify_ratio=run["ratio"],
        consistency_weight=run["alpha"],
        perturb=cfg.perturb,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        dropout_rate=cfg.dropout,
        seed=run["seed"],
        classes_per_task=cfg.classes_per_task,
    )

    chosen_strength = None
    if cfg.perturb_candidates and spec.method.startswith("pscgl"):
        from .data import build_task_sequence

        seq = build_task_sequence(dataset, spec.classes_per_task, spec.split_fractions, spec.seed)
        task1 = [dataset.graphs[i] for i in seq.tasks[0].train_idx]
        chosen_strength = select_perturb_param(task1, cfg.perturb_candidates, spec, spec.seed)
        spec = spec.with_perturb(spec.perturb.with_strength(chosen_strength))

    result = run_sequence(dataset, spec, backdoor_spec=cfg.backdoor)

    lines = []
    base = {
        "dataset": cfg.dataset_name,
        "method": spec.method,
        "seed": spec.seed,
        "budget": run["budget"],
        "ratio": spec.sparsify_ratio,
        "alpha": spec.consistency_weight,
    }
    lines.append(
        json.dumps(
            {
                "record": "run",
                **base,
                "epochs": spec.epochs,
                "learning_rate": spec.learning_rate,
                "batch_size": spec.batch_size,
                "dropout": spec.dropout_rate,
                "perturb_kind": spec.perturb.kind,
                "perturb_strength": spec.perturb.strength,
                "perturb_samples": spec.perturb.sample_count,
                "chosen_perturb_strength": chosen_strength,
                "task_classes": result.task_classes,
            }
        )
    )
    for t, row in enumerate(result.matrix.rows, start=1):
        lines.append(
            json.dumps(
                {
                    "record": "task",
                    **base,
                    "task_index": t,
                    "accuracy_row": row,
                    "ap": result.ap[t - 1],
                    "af": result.af[t - 1],
                }
            )
        )
    if cfg.backdoor is not None:
        lines.append(
            json.dumps(
                {
                    "record": "backdoor",
                    **base,
                    "target_class": cfg.backdoor.target_class,
                    "attack_task_index": cfg.backdoor.attack_task_index,
                    "poison_rate": cfg.backdoor.poison_rate,
                    "asr": result.asr,
                    "asr_trajectory": result.asr_trajectory,
                }
            )
        )

    os.makedirs(cfg.output_dir, exist_ok=True)
    name = _record_name(
        cfg.dataset_name, spec.method, run["budget"], spec.sparsify_ratio, spec.seed,
        cfg.backdoor is not None,
    )
    path = os.path.join(cfg.output_dir, name)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path


def run_config(cfg: ExperimentConfig, echo=print) -> list[str]:
    runs = build_run_grid(cfg)
    echo(f"{len(runs)} runs -> {cfg.output_dir}")
    paths: list[str] = []
    if cfg.parallelism > 1 and len(runs) > 1:
        with ProcessPoolExecutor(
            max_workers=cfg.parallelism, initializer=_limit_blas_threads
        ) as pool:
            for path in pool.map(functools.partial(_execute_run, cfg), runs):
                echo(f"  wrote {os.path.basename(path)}")
                paths.append(path)
    else:
        for run in runs:
            path = _execute_run(cfg, run)
            echo(f"  wrote {os.path.basename(path)}")
            paths.append(path)
    return paths


# --------------------------------------------------------------------------
# reporting
# --------------------------------------------------------------------------


def _mean_std(values: list[float]) -> tuple[float, float, bool]:
    """(mean, sample std, single-seed flag)."""
    if len(values) == 1:
        return values[0], 0.0, True
    return statistics.fmean(values), statistics.stdev(values), False


def _fmt_pct(mean: float, std: float) -> str:
    return f"{mean * 100:.2f} ± {std * 100:.2f}"


def load_records(results_dir: str) -> list[dict]:
    if not os.path.isdir(results_dir):
        raise NoDataError(f"no such results directory: {results_dir}")
    records: list[dict] = []
    for name in sorted(os.listdir(results_dir)):
        if not name.endswith(".jsonl"):
            continue
        with open(os.path.join(results_dir, name), "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
    if not records:
        raise NoDataError(f"no records found in {results_dir}")
    return records


def summarize(records: list[dict]) -> dict:
    """Aggregate per dataset: AP/AF (final task) and ASR tables over seeds."""
    datasets: dict[str, dict] = {}
    finals: dict[tuple, dict[int, dict]] = {}
    for rec in records:
        if rec.get("record") != "task":
            continue
        key = (rec["dataset"], rec["method"], rec["budget"], rec["ratio"])
        per_seed = finals.setdefault(key, {})
        seed = rec["seed"]
        if seed not in per_seed or rec["task_index"] > per_seed[seed]["task_index"]:
            per_seed[seed] = rec

    for (ds, method, budget, ratio), per_seed in sorted(finals.items()):
        aps = [per_seed[s]["ap"] for s in sorted(per_seed)]
        afs = [per_seed[s]["af"] for s in sorted(per_seed) if per_seed[s]["af"] is not None]
        ap_mean, ap_std, single = _mean_std(aps)
        row = {
            "method": method,
            "budget": budget,
            "ratio": ratio,
            "seeds": len(aps),
            "ap_mean": ap_mean,
            "ap_std": ap_std,
            "ap": _fmt_pct(ap_mean, ap_std),
            "single_seed": single,
        }
        if afs:
            af_mean, af_std, _ = _mean_std(afs)
            row.update(af_mean=af_mean, af_std=af_std, af=_fmt_pct(af_mean, af_std))
        else:
            row.update(af_mean=None, af_std=None, af="--")
        datasets.setdefault(ds, {"ap_af": [], "asr": {}})["ap_af"].append(row)

    asr_cells: dict[tuple, list[float]] = {}
    for rec in records:
        if rec.get("record") != "backdoor" or rec.get("asr") is None:
            continue
        asr_cells.setdefault((rec["dataset"], rec["budget"], rec["ratio"]), []).append(rec["asr"])
    for (ds, budget, ratio), values in sorted(asr_cells.items()):
        table = datasets.setdefault(ds, {"ap_af": [], "asr": {}})["asr"]
        table.setdefault(budget, {})[ratio] = statistics.fmean(values)

    return datasets


def format_tables(summary: dict) -> str:
    out: list[str] = []
    for ds, tables in sorted(summary.items()):
        if tables["ap_af"]:
            out.append(f"== {ds}: AP / AF, mean ± sample std over seeds (%) ==")
            header = f"{'method':<22} {'budget':>6} {'ratio':>6} {'seeds':>5} {'AP (%)':>16} {'AF (%)':>16}"
            out.append(header)
            out.append("-" * len(header))
            for row in tables["ap_af"]:
                note = "  (single seed)" if row["single_seed"] else ""
                out.append(
                    f"{row['method']:<22} {row['budget']:>6} {row['ratio']:>6g} "
                    f"{row['seeds']:>5} {row['ap']:>16} {row['af']:>16}{note}"
                )
            out.append("")
        if tables["asr"]:
            ratios = sorted({r for cols in tables["asr"].values() for r in cols})
            out.append(f"== {ds}: backdoor ASR, mean over seeds ==")
            header = f"{'budget':>6} " + " ".join(f"{'r=' + format(r, 'g'):>8}" for r in ratios)
            out.append(header)
            out.append("-" * len(header))
            for budget in sorted(tables["asr"]):
                cells = tables["asr"][budget]
                out.append(
                    f"{budget:>6} "
                    + " ".join(f"{cells.get(r, float('nan')):>8.3f}" for r in ratios)
                )
            out.append("")
    return "\n".join(out)


def write_report(results_dir: str, echo=print) -> dict:
    summary = summarize(load_records(results_dir))
    text = format_tables(summary)
    with open(os.path.join(results_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    with open(os.path.join(results_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    echo(text)
    return summary


# --------------------------------------------------------------------------
# gradient check / sparsify / make-data commands
# --------------------------------------------------------------------------


def _random_check_graph(rng: np.random.Generator, n: int, dim: int, label: int):
    from .data import Graph, canonical_edges

    pairs = [(int(rng.integers(0, v)), v) for v in range(1, n)]
    pairs += [
        (int(u), int(v))
        for u, v in rng.integers(0, n, size=(n, 2))
        if u != v
    ]
    return Graph(n, canonical_edges(pairs), rng.normal(size=(n, dim)), label)


def check_gradients(instances: int = 20, step: float = 1e-5, tolerance: float = 1e-4, echo=print) -> float:
    """Finite-difference sweep over random small instances; returns worst error."""
    from .nn import GradCheckLoss, finite_diff_check, init_model
    from .rng import substream

    worst = 0.0
    for seed in range(instances):
        rng = substream(seed, "gradcheck-instance")
        dim = int(rng.integers(4, 9))
        graphs = [
            _random_check_graph(rng, int(rng.integers(4, 9)), dim, int(rng.integers(0, 4)))
            for _ in range(4)
        ]
        model = init_model(dim, 6, substream(seed, "gradcheck-init"))
        loss = GradCheckLoss(
            seen_classes=(0, 1, 2, 3),
            alpha=0.2,
            perturb_spec=PerturbSpec("gaussian", sigma=0.9),
            current_count=2,
            seed=seed,
        )
        err = finite_diff_check(model, graphs, loss, step=step, coords_per_param=24)
        status = "ok" if err < tolerance else "FAIL"
        echo(f"instance {seed:2d}: max rel err {err:.3e}  {status}")
        worst = max(worst, err)
    echo(f"worst over {instances} instances: {worst:.3e} (tolerance {tolerance:g})")
    return worst


def sparsify_directory(in_dir: str, out_dir: str, ratio: float, feature_kind: str = "auto") -> int:
    """Standalone sparsification over a TUDataset directory."""
    from .data import _dataset_prefix

    prefix = _dataset_prefix(in_dir)
    if feature_kind == "auto":
        has_attrs = os.path.isfile(os.path.join(in_dir, f"{prefix}_node_attributes.txt"))
        feature_kind = "continuous" if has_attrs else "binary"
    ds = load_tudataset(in_dir, feature_kind)
    pruned = Dataset(
        tuple(sparsify(g, ratio) for g in ds.graphs),
        ds.class_count,
        ds.feature_kind,
        ds.feature_dim,
    )
    save_tudataset(pruned, out_dir, prefix)
    return len(pruned.graphs)


# --------------------------------------------------------------------------
# argparse wiring
# --------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="pscgl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the sweep described by a config file")
    p_run.add_argument("config")

    p_rep = sub.add_parser("report", help="aggregate record files into tables")
    p_rep.add_argument("results_dir")

    p_grad = sub.add_parser("check-gradients", help="finite-difference gradient suite")
    p_grad.add_argument("--instances", type=int, default=20)
    p_grad.add_argument("--step", type=float, default=1e-5)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)

    p_sp = sub.add_parser("sparsify", help="sparsify a TUDataset directory")
    p_sp.add_argument("in_dir")
    p_sp.add_argument("out_dir")
    p_sp.add_argument("--ratio", type=float, required=True)
    p_sp.add_argument("--feature-kind", default="auto", choices=["auto", "continuous", "binary"])

    p_mk = sub.add_parser("make-data", help="write a synthetic corpus in TUDataset form")
    p_mk.add_argument("out_dir")
    p_mk.add_argument("--name", default="synth")
    p_mk.add_argument("--kind", default="continuous", choices=["continuous", "binary"])
    p_mk.add_argument("--classes", type=int, default=6)
    p_mk.add_argument("--per-class", type=int, default=100)
    p_mk.add_argument("--feature-dim", type=int, default=18)
    p_mk.add_argument("--seed", type=int, default=7)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            run_config(cfg)
            write_report(cfg.output_dir)
        elif args.command == "report":
            write_report(args.results_dir)
        elif args.command == "check-gradients":
            worst = check_gradients(args.instances, args.step, args.tolerance)
            return 0 if worst < args.tolerance else 1
        elif args.command == "sparsify":
            count = sparsify_directory(args.in_dir, args.out_dir, args.ratio, args.feature_kind)
            print(f"sparsified {count} graphs at ratio {args.ratio:g} -> {args.out_dir}")
        elif args.command == "make-data":
            ds = make_corpus(
                kind=args.kind,
                n_classes=args.classes,
                per_class=args.per_class,
                feature_dim=args.feature_dim,
                seed=args.seed,
            )
            save_tudataset(ds, args.out_dir, args.name)
            print(f"wrote {len(ds.graphs)} graphs ({ds.class_count} classes) -> {args.out_dir}")
    except PscglError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
