#!/usr/bin/env python3
"""
Scenario runner and ablation suites.

run_scenario executes one incremental scenario end to end: for every task it
builds D_t, prepares and trains the heads, updates the exemplar memory, and
evaluates on a held-out set drawn once per scenario. run_ablation_suite runs
named variants of a base config on shared seeds and tabulates them.
"""

import json
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

from . import config
from .backbone import init_extractor
from .checkpoint import load_run_state, save_checkpoint
from .errors import ConfigurationError, ScenarioStepError
from .heads import SegModel, argmax_labels, begin_task, forward, freeze_digest, init_model
from .memory import UPDATES, ExemplarMemory
from .metrics import GROUPS, ConfusionMatrix, MetricsReport, accumulate, step_metrics
from .raster_io import spill_memory
from .scenario_config import ScenarioConfig, apply_overrides, validate_config
from .structured_logger import get_logger
from .synth import Scene, build_eval_scenes, build_task_dataset, eval_labels
from .trainer import FeatureStore, train_task

log = get_logger(__name__)

REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
CONFIG_JSON = "config.json"
CHECKPOINT_DIR = "checkpoints"
MEMORY_DIR = "memory"


def output_dir_for(cfg: ScenarioConfig) -> str:
    return cfg.output_dir or os.path.join(config.OUTPUT_ROOT, cfg.name)


def checkpoint_path(out_dir: str, t: int) -> str:
    return os.path.join(out_dir, CHECKPOINT_DIR, f"step_{t:02d}.ckpt")


def memory_spill_path(out_dir: str, t: int) -> str:
    return os.path.join(out_dir, MEMORY_DIR, f"step_{t:02d}")


def evaluate(
    model: SegModel, scenes: Sequence[Scene], seen: Sequence[int], store: Optional[FeatureStore] = None
) -> ConfusionMatrix:
    """Confusion matrix of ``model`` over ``scenes``, ground truth restricted to ``seen``."""
    store = store or FeatureStore(model.extractor)
    cm = ConfusionMatrix(class_ids=tuple(seen))
    for scene in scenes:
        pred = argmax_labels(forward(model, store.get(scene.image)))
        accumulate(cm, pred, eval_labels(scene, seen))
    return cm


def _memory_audit(memory: ExemplarMemory, seen: List[int], samples_so_far: int) -> Dict[str, Any]:
    holdings = memory.holdings()
    exact = len(memory) == min(memory.capacity, samples_so_far)
    covered = memory.capacity < len(seen) or memory.covers(seen)
    return {
        "memory_size": len(memory),
        "memory_holdings": {str(c): n for c, n in holdings.items()},
        "memory_coverage_ok": bool(exact and covered),
    }


def write_report(report: MetricsReport, out_dir: str) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, REPORT_JSON)
    csv_path = os.path.join(out_dir, REPORT_CSV)
    with open(json_path, "w", encoding="utf-8") as f:
        f.write(report.to_json())
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(report.to_csv())
    return {"json": json_path, "csv": csv_path}


def regenerate_csv(out_dir: str) -> str:
    """Rewrite report.csv from the stored report.json without recomputing anything."""
    json_path = os.path.join(out_dir, REPORT_JSON)
    if not os.path.exists(json_path):
        raise ConfigurationError(f"No {REPORT_JSON} in {out_dir}")
    with open(json_path, "r", encoding="utf-8") as f:
        report = MetricsReport.from_json(f.read())
    csv_path = os.path.join(out_dir, REPORT_CSV)
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(report.to_csv())
    return csv_path


def run_scenario(cfg: ScenarioConfig, resume: Optional[str] = None, write_outputs: bool = True) -> MetricsReport:
    """Run every task of ``cfg`` and return the per-step report."""
    resolved = cfg.resolved()
    schedule = resolved.schedule
    train_cfg = resolved.train
    out_dir = output_dir_for(cfg)
    scenario_log = log.bind(scenario=cfg.name, method=cfg.method, seed=cfg.seed)

    extractor = init_extractor(resolved.extractor_seed, spec=[] if cfg.train.extractor == "identity" else None)
    model = init_model(extractor, seed=train_cfg.seed, init_std=train_cfg.init_std)
    memory = ExemplarMemory(capacity=resolved.memory_capacity) if resolved.memory_capacity > 0 else None
    prev_model: Optional[SegModel] = None
    steps = []

    if resume:
        state = load_run_state(resume)
        if state.state.get("fingerprint") != cfg.fingerprint():
            raise ConfigurationError(f"Checkpoint {resume} was written by a different scenario config")
        model = prev_model = state.model
        memory = state.memory
        steps = list(state.report.steps) if state.report else []
        scenario_log.info("Resuming scenario", extra={"checkpoint": resume, "after_step": model.task_index})

    eval_scenes = build_eval_scenes(schedule, cfg.data.eval_scenes, resolved.eval_seed, resolved.geometry)
    store = FeatureStore(model.extractor)
    meta = {
        "name": cfg.name,
        "method": cfg.method,
        "seed": cfg.seed,
        "schedule": schedule.to_dict(),
        "config": json.loads(cfg.fingerprint()),
    }

    for t in range(model.task_index + 1, schedule.num_tasks + 1):
        try:
            data = build_task_dataset(
                schedule,
                t,
                cfg.data.train_scenes_per_task,
                resolved.dataset_seed,
                cfg.data.protocol,
                resolved.geometry,
                cfg.augment.saliency_corruption,
            )
            prepared = begin_task(model, schedule.new_classes(t), train_cfg)
            past = sorted(schedule.past_classes(t))
            digest_before = freeze_digest(prepared, past) if t >= 2 else None

            epochs: List[dict] = []
            trained = train_task(
                prepared,
                data,
                memory if t >= 2 else None,
                train_cfg,
                resolved.augment,
                prev_model,
                feature_store=store,
                on_epoch=epochs.append,
            )

            extra: Dict[str, Any] = {
                "final_loss": epochs[-1]["loss"] if epochs else None,
                "pseudo_labels": sum(e["pseudo_labels"] for e in epochs),
            }
            if t >= 2 and train_cfg.freeze:
                extra["freeze_intact"] = freeze_digest(trained, past) == digest_before
            if memory is not None:
                memory = UPDATES[resolved.memory_sampling](memory, data, schedule, t, resolved.memory_seed)
                seen = sorted(schedule.seen_classes(t))
                extra.update(_memory_audit(memory, seen, cfg.data.train_scenes_per_task * t))
                if write_outputs and cfg.memory.spill:
                    spill_memory(memory, memory_spill_path(out_dir, t))

            cm = evaluate(trained, eval_scenes, sorted(schedule.seen_classes(t)), store)
            metrics = step_metrics(cm, schedule, t)
            metrics.extra = extra
            steps.append(metrics)
            model = prev_model = trained
            scenario_log.info("Step evaluated", extra={"step": t, "miou": metrics.miou, **extra})

            if write_outputs and cfg.save_checkpoints:
                save_checkpoint(
                    trained,
                    checkpoint_path(out_dir, t),
                    schedule=schedule,
                    memory=memory,
                    report=MetricsReport(steps=list(steps), meta=meta),
                    state={"fingerprint": cfg.fingerprint()},
                )
        except ScenarioStepError:
            raise
        except Exception as e:
            raise ScenarioStepError(t, e) from e

    report = MetricsReport(steps=steps, meta=meta)
    if write_outputs:
        write_report(report, out_dir)
        with open(os.path.join(out_dir, CONFIG_JSON), "w", encoding="utf-8") as f:
            f.write(cfg.model_dump_json(indent=2) + "\n")
        scenario_log.info("Scenario complete", extra={"output_dir": out_dir})
    return report


@dataclass
class Variant:
    label: str
    overrides: List[str]


def _table3(_: ScenarioConfig) -> List[Variant]:
    return [
        Variant("full", ["method=ssul"]),
        Variant("no_unknown", ["method=ssul", "ablation.no_unknown=true"]),
        Variant("no_freeze", ["method=ssul", "ablation.no_freeze=true"]),
        Variant("softmax_ce", ["method=ssul", "ablation.softmax_ce=true"]),
    ]


def _saliency(_: ScenarioConfig) -> List[Variant]:
    return [Variant(f"saliency_p{p}", [f"augment.saliency_corruption={p}"]) for p in (0.0, 0.05, 0.15)]


def _table4(base: ScenarioConfig) -> List[Variant]:
    rows = _saliency(base)
    inits = ("weight_transfer", "random", "from_cb")
    rows += [Variant(f"init_{init}", [f"ablation.head_init={init}"]) for init in inits]
    rows += [Variant(f"memory_{s}", ["method=ssul_m", f"memory.sampling={s}"]) for s in ("class_balanced", "random")]
    return rows


def _tau_sweep(_: ScenarioConfig) -> List[Variant]:
    return [Variant(f"tau_{tau}", [f"augment.tau={tau}"]) for tau in (0.0, 0.3, 0.5, 0.7, 0.9, 1.0)]


def _memory_size(base: ScenarioConfig) -> List[Variant]:
    full = base.data.train_scenes_per_task * base.schedule.build().num_tasks
    sizes = [("0", 0), ("4", 4), ("16", 16), ("64", 64), ("full", full)]
    return [Variant(f"memory_{label}", ["method=ssul_m", f"memory.capacity={size}"]) for label, size in sizes]


def _weight_transfer_iters(base: ScenarioConfig) -> List[Variant]:
    epochs = base.train.n_epochs
    rows = [
        Variant(f"random_x{k}", ["ablation.head_init=random", f"train.n_epochs={epochs * k}"]) for k in (1, 2, 4)
    ]
    rows.append(Variant("weight_transfer_x1", ["ablation.head_init=weight_transfer"]))
    return rows


def _class_order(_: ScenarioConfig) -> List[Variant]:
    return [Variant(f"order_{s}", [f"schedule.ordering_seed={s}"]) for s in range(5)]


SUITES: Dict[str, Callable[[ScenarioConfig], List[Variant]]] = {
    "table3": _table3,
    "table4": _table4,
    "tau_sweep": _tau_sweep,
    "memory_size": _memory_size,
    "saliency": _saliency,
    "weight_transfer_iters": _weight_transfer_iters,
    "class_order": _class_order,
}


@dataclass
class SuiteRow:
    label: str
    per_seed: Dict[str, Dict[str, float]]
    median: Dict[str, float]
    mean: Dict[str, float] = field(default_factory=dict)
    std: Dict[str, float] = field(default_factory=dict)


@dataclass
class SuiteReport:
    suite: str
    seeds: List[int]
    rows: List[SuiteRow]
    orderings: List[dict]

    def to_json(self) -> str:
        return json.dumps(_finite(asdict(self)), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        lines = ["| variant | " + " | ".join(GROUPS) + " |", "|---" * (len(GROUPS) + 1) + "|"]
        for row in self.rows:
            cells = [_fmt(row.median.get(g)) for g in GROUPS]
            lines.append(f"| {row.label} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None or value != value else f"{100.0 * value:.2f}"


def _finite(value):
    if isinstance(value, float) and value != value:
        return None
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_finite(v) for v in value]
    return value


def _variant_config(base: ScenarioConfig, variant: Variant, seed: int, suite: str) -> ScenarioConfig:
    data = apply_overrides(base.model_dump(), variant.overrides + [f"seed={seed}"])
    data["name"] = f"{base.name}-{suite}-{variant.label}-seed{seed}"
    data["output_dir"] = os.path.join(output_dir_for(base), suite, variant.label, f"seed_{seed}")
    return validate_config(data)


def _run_job(payload: dict) -> dict:
    cfg = ScenarioConfig.model_validate(payload)
    return json.loads(run_scenario(cfg).to_json())


def _summarise(values: List[float]) -> Dict[str, float]:
    finite = [v for v in values if v == v]
    if not finite:
        return {"median": float("nan"), "mean": float("nan"), "std": float("nan")}
    return {
        "median": statistics.median(finite),
        "mean": statistics.fmean(finite),
        "std": statistics.pstdev(finite) if len(finite) > 1 else 0.0,
    }


def run_ablation_suite(
    base_cfg: ScenarioConfig, suite: str, seeds: Sequence[int] = (0,), workers: Optional[int] = None
) -> SuiteReport:
    """Run ``suite`` over ``seeds`` and compare every row with the first one."""
    if suite not in SUITES:
        raise ConfigurationError(f"Unknown suite {suite!r}; choose from {sorted(SUITES)}")
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigurationError("An ablation suite needs at least one seed")
    variants = SUITES[suite](base_cfg)
    jobs = [(v, s, _variant_config(base_cfg, v, s, suite)) for v in variants for s in seeds]
    workers = workers or config.WORKERS
    log.info("Ablation suite started", extra={"suite": suite, "variants": len(variants), "seeds": seeds})

    payloads = [cfg.model_dump() for _, _, cfg in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, payloads))
    else:
        results = [_run_job(p) for p in payloads]

    rows = []
    for v_index, variant in enumerate(variants):
        per_seed = {}
        for s_index, seed in enumerate(seeds):
            final = results[v_index * len(seeds) + s_index]["steps"][-1]["miou"]
            per_seed[str(seed)] = {g: (float("nan") if final.get(g) is None else final[g]) for g in GROUPS}
        stats = {g: _summarise([per_seed[str(s)][g] for s in seeds]) for g in GROUPS}
        rows.append(
            SuiteRow(
                label=variant.label,
                per_seed=per_seed,
                median={g: stats[g]["median"] for g in GROUPS},
                mean={g: stats[g]["mean"] for g in GROUPS},
                std={g: stats[g]["std"] for g in GROUPS},
            )
        )

    reference = rows[0]
    orderings = []
    for row in rows[1:]:
        for g in GROUPS:
            a, b = reference.median[g], row.median[g]
            if a != a or b != b:
                continue
            orderings.append({"group": g, "reference": reference.label, "variant": row.label, "gap": a - b})

    result = SuiteReport(suite=suite, seeds=seeds, rows=rows, orderings=orderings)
    out_dir = os.path.join(output_dir_for(base_cfg), suite)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "suite.json"), "w", encoding="utf-8") as f:
        f.write(result.to_json())
    with open(os.path.join(out_dir, "suite.md"), "w", encoding="utf-8") as f:
        f.write(result.to_table())
    log.info("Ablation suite complete", extra={"suite": suite, "output_dir": out_dir})
    return result
