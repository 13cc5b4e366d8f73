"""Config-driven experiment runner: composes data generation, task
reassignment, VFL training, attacks, and MI profiling into named scenarios,
and writes deterministic CSV/JSON reports.

Reports round to 6 significant digits at construction time so the in-memory
report, its serialized form, and a reparse are all equal. Wall times are kept
out of the serialized payload so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .attacks import cluster_lia, completion_lia, gradient_cluster_lia, sample_auxiliary
from .data import Dataset, PartitionedDataset, builtin_task_specs, gen_synthetic, load_idx, \
    partition_features, reassign_task
from .defenses import DefenseConfig
from .engine import SplitSpec, VflConfig, derive_seed, train_vfl
from .errors import ConfigError, IOFailure, VflError
from .infotheory import mi_profile
from .nn import mlp_spec

_TAG_AUX = 11

ATTACK_KINDS = ("cluster", "completion", "gradient_cluster")


def _round6(x: float) -> float:
    return float(f"{float(x):.6g}")


@dataclass(frozen=True)
class AttackPlan:
    kind: str
    aux_per_class: int = 10
    ft_epochs: int = 30
    ft_lr: float = 0.1
    grad_epoch: int = 0
    party: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if self.aux_per_class < 1 or self.party < 0:
            raise ConfigError("need aux_per_class >= 1 and party >= 0")


@dataclass
class ScenarioConfig:
    name: str
    repetitions: int
    seed: int
    data: dict                 # synthetic params or idx paths
    task: str
    layers: list               # full network dimension chain (original classes last)
    cut_pos: int
    n_parties: int
    epochs: int
    batch_size: int
    lr: float
    defenses: tuple = ()
    attacks: tuple = ()
    mi_enabled: bool = False
    mi_bins: int = 30
    out: str = "report"
    format: str = "json"

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("need repetitions >= 1")
        if self.epochs < 1:
            raise ConfigError("scenarios need at least one training epoch")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown report format {self.format!r}")
        if self.mi_bins < 2:
            raise ConfigError("need mi bins >= 2")


def load_scenario(path) -> ScenarioConfig:
    """Parse a TOML scenario file into a validated ScenarioConfig."""
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}") from e
    try:
        data = dict(raw["data"])
        vfl = dict(raw["vfl"])
        cfg = ScenarioConfig(
            name=raw.get("name", "scenario"),
            repetitions=int(raw.get("repetitions", 1)),
            seed=int(raw.get("seed", 0)),
            data=data,
            task=str(raw.get("task", {}).get("name", "original")),
            layers=[int(x) for x in vfl["layers"]],
            cut_pos=int(vfl.get("cut_pos", -1)),
            n_parties=int(vfl.get("parties", 1)),
            epochs=int(vfl.get("epochs", 1)),
            batch_size=int(vfl.get("batch_size", 64)),
            lr=float(vfl.get("lr", 0.1)),
            defenses=tuple(DefenseConfig(**d) for d in raw.get("defense", [])),
            attacks=tuple(AttackPlan(**a) for a in raw.get("attack", [])),
            mi_enabled=bool(raw.get("mi", {}).get("enabled", False)),
            mi_bins=int(raw.get("mi", {}).get("bins", 30)),
            out=str(raw.get("out", "report")),
            format=str(raw.get("format", "json")),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid scenario config {path}: {e}") from e
    return cfg


def _load_base_data(cfg: ScenarioConfig, seed: int) -> Dataset:
    kind = cfg.data.get("kind", "synthetic")
    if kind == "synthetic":
        return gen_synthetic(int(cfg.data["n"]), int(cfg.data["d"]),
                             int(cfg.data["classes"]), float(cfg.data["separation"]), seed)
    if kind == "idx":
        return load_idx(cfg.data["images"], cfg.data["labels"])
    raise ConfigError(f"unknown data kind {kind!r}")


def resolve_task(name: str, n_classes: int, kind: str = None):
    if kind is None:
        kind = "mnist-like-10" if n_classes == 10 else "generic-C"
    specs = builtin_task_specs(kind, n_classes)
    for spec in specs:
        if spec.name == name:
            return spec
    raise ConfigError(f"unknown task {name!r}; available: {[s.name for s in specs]}")


@dataclass
class Report:
    scenario: str
    records: list
    aggregate: dict
    wall_times: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        if not self.records:
            raise ConfigError("a report needs at least one repetition record")

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "records": self.records,
                "aggregate": self.aggregate}

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(d["scenario"], d["records"], d["aggregate"])


def _mean_std(values: list) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return {"mean": _round6(float(np.mean(arr))), "std": _round6(std)}


def _run_attack(plan: AttackPlan, state, traces, part: PartitionedDataset,
                task, seed: int, attack_index: int):
    p = plan.party
    if p >= len(traces):
        raise ConfigError(f"attack party {p} out of range for {len(traces)} parties")
    labels = part.base.labels
    aux = sample_auxiliary(part.party_features(p), labels, plan.aux_per_class,
                           task.c_new, derive_seed(seed, _TAG_AUX, attack_index))
    if plan.kind == "cluster":
        return cluster_lia(traces[p].final_embeddings, task.c_new, aux,
                           derive_seed(seed, _TAG_AUX, attack_index, 1),
                           truth=labels, c_orig=task.c_orig)
    if plan.kind == "completion":
        return completion_lia(state.bottom_models[p], aux, part.party_features(p),
                              task.c_new, plan.ft_epochs, plan.ft_lr,
                              derive_seed(seed, _TAG_AUX, attack_index, 2),
                              truth=labels, c_orig=task.c_orig)
    if plan.grad_epoch >= len(traces[p].epoch_gradients):
        raise ConfigError(f"gradient attack epoch {plan.grad_epoch} outside the trace")
    return gradient_cluster_lia(traces[p].epoch_gradients[plan.grad_epoch], task.c_new,
                                aux, derive_seed(seed, _TAG_AUX, attack_index, 3),
                                truth=labels, c_orig=task.c_orig)


def run_scenario(cfg: ScenarioConfig) -> Report:
    """Run every repetition at seed = base + r and aggregate mean/sample-std."""
    try:
        return _run_scenario(cfg)
    except VflError as e:
        raise type(e)(f"scenario {cfg.name!r}: {e}") from e


def _run_scenario(cfg: ScenarioConfig) -> Report:
    records = []
    wall_times = []
    for r in range(cfg.repetitions):
        t0 = time.perf_counter()
        seed = cfg.seed + r
        base = _load_base_data(cfg, seed)
        if cfg.layers[-1] != base.n_classes:
            raise ConfigError(
                f"configured final width {cfg.layers[-1]} != {base.n_classes} classes")
        task = resolve_task(cfg.task, base.n_classes, cfg.data.get("task_kind"))
        task_ds = Dataset(base.features, reassign_task(base.labels, task), task.c_new)
        part = PartitionedDataset(task_ds, partition_features(base.d, cfg.n_parties, seed))
        dims = list(cfg.layers[:-1]) + [task.c_new]
        vfl = VflConfig(SplitSpec(mlp_spec(dims), cfg.cut_pos), cfg.n_parties,
                        cfg.epochs, cfg.batch_size, cfg.lr, cfg.defenses, seed)
        state, traces = train_vfl(vfl, part)
        record = {
            "scenario": cfg.name,
            "seed": seed,
            "task": task.name,
            "mta": _round6(state.mta_history[-1]) if state.mta_history else None,
            "attacks": [],
        }
        for i, plan in enumerate(cfg.attacks):
            res = _run_attack(plan, state, traces, part, task, seed, i)
            record["attacks"].append({"name": res.attack_name,
                                      "raw": _round6(res.raw_accuracy),
                                      "lift": _round6(res.lift_normalized_accuracy)})
        if cfg.mi_enabled:
            prof = mi_profile(state, part, cfg.mi_bins)
            record["mi"] = {
                "per_party": [[_round6(e.value) for e in seq] for seq in prof.per_party],
                "top": [_round6(e.value) for e in prof.top],
            }
        records.append(record)
        wall_times.append(time.perf_counter() - t0)

    aggregate = {"repetitions": cfg.repetitions,
                 "mta": _mean_std([rec["mta"] for rec in records])}
    attack_agg = {}
    for i, plan in enumerate(cfg.attacks):
        name = records[0]["attacks"][i]["name"]
        attack_agg[name] = {
            "raw": _mean_std([rec["attacks"][i]["raw"] for rec in records]),
            "lift": _mean_std([rec["attacks"][i]["lift"] for rec in records]),
        }
    aggregate["attacks"] = attack_agg
    return Report(cfg.name, records, aggregate, wall_times)


CSV_HEADER = ["scenario", "seed", "kind", "task", "mta", "attack", "raw_acc", "lift_acc"]


def write_report(report: Report, path, format: str) -> None:
    """Serialize the report; CSV gets one row per (repetition, attack) plus
    mean/std aggregate rows per attack, JSON mirrors the record tree."""
    if format == "json":
        payload = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    elif format == "csv":
        rows = [CSV_HEADER]
        for rec in report.records:
            atk = rec["attacks"] or [{"name": "", "raw": "", "lift": ""}]
            for a in atk:
                rows.append([rec["scenario"], rec["seed"], "rep", rec["task"],
                             rec["mta"], a["name"], a["raw"], a["lift"]])
        task = report.records[0]["task"]
        agg = report.aggregate
        names = list(agg["attacks"]) or [""]
        for stat in ("mean", "std"):
            for name in names:
                a = agg["attacks"].get(name, {"raw": {stat: ""}, "lift": {stat: ""}})
                rows.append([report.scenario, "", stat, task, agg["mta"][stat],
                             name, a["raw"][stat] if name else "", a["lift"][stat] if name else ""])
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        payload = buf.getvalue()
    else:
        raise ConfigError(f"unknown report format {format!r}")
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(payload)
    except OSError as e:
        raise IOFailure(f"cannot write report to {path}: {e}") from e
