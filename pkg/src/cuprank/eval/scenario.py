"""Scenario files: workload + training + simulation settings in one TOML."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from ..core import (ContextSchema, EndorsementVocabulary, read_toml, default_schema_path,
                    default_vocab_path, load_schema, load_vocab)
from ..pipeline import TrainConfig, TrainResult, train_pipeline
from .metrics import MetricsReport
from .simulate import ContextualArm, GlobalArm, OracleArm, SimulationConfig, simulate_sessions
from .synthetic import GroundTruth, ScenarioError, SyntheticConfig, generate

ARM_NAMES = ("global", "contextual", "oracle", "reversed")


@dataclass(frozen=True)
class Scenario:
    name: str
    workload: SyntheticConfig
    train: TrainConfig
    simulation: SimulationConfig
    schema: ContextSchema
    vocab: EndorsementVocabulary

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, workload=replace(self.workload, seed=seed),
                       train=replace(self.train, seed=seed),
                       simulation=replace(self.simulation, seed=seed))


def _resolve(ref: str | None, base: Path, default: Path) -> Path:
    if ref in (None, "default"):
        return default
    p = Path(ref)
    return p if p.is_absolute() else base / p


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    data = read_toml(path)
    meta = data.get("scenario", {})
    unknown = set(data) - {"scenario", "workload", "train", "simulation"}
    if unknown:
        raise ScenarioError(f"unknown scenario sections: {sorted(unknown)}")
    if "seed" not in data.get("workload", {}):
        raise ScenarioError("workload.seed is mandatory")
    schema = load_schema(_resolve(meta.get("schema"), path.parent, default_schema_path()))
    vocab = load_vocab(_resolve(meta.get("vocab"), path.parent, default_vocab_path()))
    workload = SyntheticConfig.from_dict(data["workload"])
    train = TrainConfig.from_dict({"seed": workload.seed, **data.get("train", {})})
    sim = SimulationConfig.from_dict({"seed": workload.seed, **data.get("simulation", {})})
    return Scenario(meta.get("name", path.stem), workload, train, sim, schema, vocab)


def builtin_scenario(name: str) -> Path:
    from importlib import resources
    return Path(str(resources.files("cuprank") / "data" / "scenarios" / f"{name}.toml"))


@dataclass
class ScenarioRun:
    report: MetricsReport
    training: TrainResult
    truth: GroundTruth
    n_reviews: int


def run_scenario(scenario: Scenario, arms: Sequence[str] = ("global", "contextual"),
                 training: TrainResult | None = None) -> ScenarioRun:
    """Generate the workload, train on it (unless given a model), simulate the arms."""
    unknown = [a for a in arms if a not in ARM_NAMES]
    if unknown or not arms:
        raise ScenarioError(f"unknown arms {unknown}; choose from {ARM_NAMES}")
    reviews, truth = generate(scenario.workload, scenario.schema, scenario.vocab)
    if training is None:
        training = train_pipeline(reviews, scenario.schema, scenario.vocab, scenario.train)
    factories = {
        "global": lambda: GlobalArm(training.artifact),
        "contextual": lambda: ContextualArm(training.artifact),
        "oracle": lambda: OracleArm(truth.world),
        "reversed": lambda: OracleArm(truth.world, reverse=True),
    }
    built = {a: factories[a]() for a in arms}
    report = simulate_sessions(truth.world, built, scenario.simulation,
                               persona_mixing=scenario.workload.persona_mixing,
                               missing_context_rate=scenario.workload.missing_context_rate,
                               baseline=arms[0])
    meta = dict(report.meta)
    meta.update({"scenario": scenario.name, "reviews": len(reviews),
                 "cups": len(training.artifact.cups),
                 "contextual_rankers": len(training.artifact.rankers.per_cup)})
    if training.silhouette is not None:
        meta["chosen_k"] = training.silhouette.chosen_k
    report = MetricsReport(report.arms, report.baseline, meta)
    return ScenarioRun(report, training, truth, len(reviews))
