"""End-to-end experiment runner: config loading, per-trial pipeline, reports.

A trial is: (re)generate or load data -> train/test split -> client partition
-> federated training -> evaluate the global model and every client's final
local model on the shared test set. Trials are independently seeded from
(seed, trial_index) so they can run in parallel with identical results.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, data, federation, metrics, nn

DEFAULT_HIDDEN = [64, 32]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int = 0
    trials: int = 1
    task: str = "multiclass"  # or "binary"
    scenario: str = "balanced_standard"
    training: federation.TrainingConfig = field(default_factory=federation.TrainingConfig)
    hidden_layers: list = field(default_factory=lambda: list(DEFAULT_HIDDEN))
    data_source: str = "synthetic:default"
    synthetic_count_per_family: int = 140
    synthetic_benign_count: int = 2000
    synthetic_separation: float = 4.0
    output_dir: str = "runs/out"

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.task not in ("multiclass", "binary"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.scenario not in metrics.SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        expected_mode = "weighted" if self.scenario.endswith("_weighted") else "standard"
        if self.training.loss_mode != expected_mode:
            raise ConfigError(
                f"scenario {self.scenario} requires loss_mode={expected_mode!r}, "
                f"got {self.training.loss_mode!r}"
            )
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError("hidden_layers must be positive ints (empty list = linear softmax model)")
        try:
            self.training.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def registry(self) -> data.ClassRegistry:
        return data.multiclass_registry() if self.task == "multiclass" else data.binary_registry()

    def layers(self, num_classes: int) -> list[nn.LayerSpec]:
        dims = [data.N_FEATURES] + list(self.hidden_layers)
        specs = [
            nn.LayerSpec(dims[i], dims[i + 1], "relu") for i in range(len(dims) - 1)
        ]
        specs.append(nn.LayerSpec(dims[-1], num_classes, "softmax"))
        return specs

    def as_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "trials": self.trials,
            "task": self.task,
            "scenario": self.scenario,
            "hidden_layers": list(self.hidden_layers),
            "data_source": self.data_source,
            "synthetic_count_per_family": self.synthetic_count_per_family,
            "synthetic_benign_count": self.synthetic_benign_count,
            "synthetic_separation": self.synthetic_separation,
            "output_dir": self.output_dir,
            "training": {
                "rounds": self.training.rounds,
                "epochs": self.training.epochs,
                "batch_size": self.training.batch_size,
                "learning_rate": self.training.learning_rate,
                "loss_mode": self.training.loss_mode,
                "seed": self.training.seed,
                "client_fraction": self.training.client_fraction,
                "zero_count_policy": self.training.zero_count_policy,
            },
        }
        return d


_TRAINING_KEYS = {
    "rounds",
    "epochs",
    "batch_size",
    "learning_rate",
    "loss_mode",
    "seed",
    "client_fraction",
    "zero_count_policy",
}
_TOP_KEYS = {
    "seed",
    "trials",
    "task",
    "scenario",
    "training",
    "hidden_layers",
    "data_source",
    "synthetic_count_per_family",
    "synthetic_benign_count",
    "synthetic_separation",
    "output_dir",
}


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Strict loader: every field has a default, unknown keys are hard errors
    (a silent typo would invalidate an experiment)."""
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    tdoc = doc.get("training", {})
    if not isinstance(tdoc, dict):
        raise ConfigError("'training' must be a table")
    unknown = set(tdoc) - _TRAINING_KEYS
    if unknown:
        raise ConfigError(f"unknown training keys: {sorted(unknown)}")
    training = federation.TrainingConfig(**tdoc)
    cfg = ExperimentConfig(
        **{k: v for k, v in doc.items() if k != "training"}, training=training
    )
    # default the per-scenario loss mode when the config omits it
    if "loss_mode" not in tdoc and cfg.scenario.endswith("_weighted"):
        cfg.training.loss_mode = "weighted"
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return config_from_dict(doc)


@dataclass
class TrialResult:
    report: metrics.MetricsReport
    norm_mean: np.ndarray
    norm_std: np.ndarray
    confusions: dict = field(default_factory=dict)  # model name -> Q x Q counts


def _trial_seeds(seed: int, trial_index: int) -> tuple[int, int, int, int]:
    state = np.random.SeedSequence(seed, spawn_key=(trial_index,)).generate_state(4)
    return tuple(int(s) for s in state)


def run_trial(
    cfg: ExperimentConfig,
    trial_index: int,
    base_dataset: data.Dataset | None = None,
) -> TrialResult:
    """One seeded trial; base_dataset is None for synthetic sources (fresh
    data per trial) and a fixed loaded dataset otherwise."""
    synth_seed, split_seed, part_seed, train_seed = _trial_seeds(cfg.seed, trial_index)
    if base_dataset is None:
        specs = data.default_synthetic_spec(
            count_per_family=cfg.synthetic_count_per_family,
            benign_count=cfg.synthetic_benign_count,
            separation=cfg.synthetic_separation,
        )
        dataset = data.generate_synthetic(specs, synth_seed)
    else:
        dataset = base_dataset

    train, test = data.split_train_test(dataset, split_seed)
    if cfg.scenario == "balanced_standard":
        plan = data.partition_balanced(train, K=3, seed=part_seed)
    else:
        plan = data.partition_canonical_imbalanced(train, seed=part_seed)

    mean, std = data.fit_zscore(train.features)
    registry = cfg.registry()
    clients = []
    for i, client_ds in enumerate(plan.materialize(train)):
        clients.append(
            federation.ClientState(
                client_id=i,
                features=data.apply_zscore(client_ds.features, mean, std),
                labels=client_ds.labels(registry),
                num_classes=registry.num_classes,
            )
        )
    tcfg = federation.TrainingConfig(
        rounds=cfg.training.rounds,
        epochs=cfg.training.epochs,
        batch_size=cfg.training.batch_size,
        learning_rate=cfg.training.learning_rate,
        loss_mode=cfg.training.loss_mode,
        seed=train_seed,
        client_fraction=cfg.training.client_fraction,
        zero_count_policy=cfg.training.zero_count_policy,
    )
    layers = cfg.layers(registry.num_classes)
    result = federation.run_federation(clients, tcfg, layers)

    test_X = data.apply_zscore(test.features, mean, std)
    test_y = test.labels(registry)
    confusions = {"global": metrics.evaluate(result.global_params, test_X, test_y)}
    for c in clients:
        # rounds = 0 leaves no local snapshot; fall back to the initial model
        local = result.client_final.get(c.client_id, result.global_params)
        confusions[f"client_{c.client_id + 1}"] = metrics.evaluate(local, test_X, test_y)
    rows = {name: metrics.metrics_from_confusion(cm) for name, cm in confusions.items()}
    report = metrics.MetricsReport(
        scenario=cfg.scenario,
        task=cfg.task,
        trials=1,
        rows=rows,
        per_trial=[{name: m.as_dict() for name, m in rows.items()}],
    )
    return TrialResult(report, mean, std, confusions)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    """Run cfg.trials independent trials (optionally in parallel), aggregate,
    and write human/machine reports plus a re-execution metadata file."""
    cfg.validate()
    base_dataset = None
    if cfg.data_source != "synthetic:default":
        base_dataset = data.load_dataset(cfg.data_source)

    indices = list(range(cfg.trials))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda i: run_trial(cfg, i, base_dataset), indices))
    else:
        results = [run_trial(cfg, i, base_dataset) for i in indices]

    report = metrics.aggregate_trials([r.report for r in results])
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(metrics.render_table(report))
    (out_dir / "report.json").write_text(metrics.report_to_json(report))

    metadata = {
        "software_version": __version__,
        "config": cfg.as_dict(),
        "trial_seeds": [
            dict(zip(("synth", "split", "partition", "training"), _trial_seeds(cfg.seed, i)))
            for i in indices
        ],
        "canonical_partition_counts": data.CANONICAL_IMBALANCED_COUNTS.tolist(),
        "normalization": [
            {"mean": r.norm_mean.tolist(), "std": r.norm_std.tolist()} for r in results
        ],
        "class_weight_zero_policy": cfg.training.zero_count_policy,
    }
    (out_dir / "metadata.json").write_text(
        json.dumps(metadata, indent=2, sort_keys=True) + "\n"
    )
    return {
        "report": report,
        "paths": {
            "human": out_dir / "report.txt",
            "machine": out_dir / "report.json",
            "metadata": out_dir / "metadata.json",
        },
    }
