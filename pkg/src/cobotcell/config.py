"""Run-configuration file: one JSON document with sections for the task,
the human population, the three policies and experiment defaults."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .engine import EngineConfig
from .human import PopulationModel
from .model import ConfigError, TaskConfig
from .policies import (
    AdaptiveConfig, SensorPolicyConfig, TimingPolicyConfig, Weights,
)


@dataclass
class ExperimentDefaults:
    n_subjects: int = 80
    crn: bool = True
    replications: int = 1


@dataclass
class AppConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    population: PopulationModel = field(default_factory=PopulationModel)
    timing: TimingPolicyConfig = field(default_factory=TimingPolicyConfig)
    sensor: SensorPolicyConfig = field(default_factory=SensorPolicyConfig)
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)
    experiment: ExperimentDefaults = field(default_factory=ExperimentDefaults)
    session_timeout: float = 120.0
    session_dir: str = "sessions"

    def engine_config(self, policy_id: str) -> EngineConfig:
        return EngineConfig(
            task=self.task,
            policy_id=policy_id,
            timing=self.timing,
            sensor=self.sensor,
            adaptive=self.adaptive,
            population_mean_place_b=self.population.pop_mean_place_b,
            fetch_reaction=self.population.fetch_reaction,
        )

    def validate(self) -> None:
        self.task.validate()
        self.population.validate()
        self.timing.validate()
        self.sensor.validate(self.task)
        self.adaptive.validate()
        if self.session_timeout <= 0:
            raise ConfigError("session_timeout must be > 0")


def _build(cls, data: dict, **overrides):
    known = {f: data[f] for f in data if f in cls.__dataclass_fields__}
    unknown = set(data) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(
            f"unknown {cls.__name__} fields: {sorted(unknown)}")
    known.update(overrides)
    return cls(**known)


def load_config(path: Optional[Union[str, Path]] = None) -> AppConfig:
    """Load an AppConfig from a JSON file; absent file or sections fall
    back to defaults."""
    if path is None:
        cfg = AppConfig()
        cfg.validate()
        return cfg
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")

    policies = raw.get("policies", {})
    adaptive_raw = dict(policies.get("adaptive", {}))
    weights = Weights(**adaptive_raw.pop("weights", {}))
    bands = adaptive_raw.pop("bands", None)
    if bands is not None:
        adaptive_raw["error_band_small"], adaptive_raw["error_band_large"] = bands
    adaptive = _build(AdaptiveConfig, adaptive_raw, weights=weights)

    cfg = AppConfig(
        task=_build(TaskConfig, raw.get("task", {})),
        population=_build(PopulationModel, raw.get("human_population", {})),
        timing=_build(TimingPolicyConfig, policies.get("timing", {})),
        sensor=_build(SensorPolicyConfig, policies.get("sensor", {})),
        adaptive=adaptive,
        experiment=_build(ExperimentDefaults, raw.get("experiment", {})),
        session_timeout=raw.get("session_timeout", 120.0),
        session_dir=raw.get("session_dir", "sessions"),
    )
    cfg.validate()
    return cfg


def dump_config(cfg: AppConfig) -> str:
    doc = {
        "task": {
            "cycles_total": cfg.task.cycles_total,
            "cubes_b_per_cycle": cfg.task.cubes_b_per_cycle,
            "place_a_duration": cfg.task.place_a_duration,
            "handover_prep_duration": cfg.task.handover_prep_duration,
            "secondary_unit_duration": cfg.task.secondary_unit_duration,
            "buffer_capacity": cfg.task.buffer_capacity,
        },
        "human_population": {
            "pop_mean_place_b": cfg.population.pop_mean_place_b,
            "pop_sd": cfg.population.pop_sd,
            "cv_mean": cfg.population.cv_mean,
            "cv_sd": cfg.population.cv_sd,
            "drift_mean": cfg.population.drift_mean,
            "drift_sd": cfg.population.drift_sd,
            "mean_place_a": cfg.population.mean_place_a,
            "fetch_reaction": cfg.population.fetch_reaction,
        },
        "policies": {
            "timing": {"interval": cfg.timing.interval},
            "sensor": {"trigger_pick_index": cfg.sensor.trigger_pick_index},
            "adaptive": {
                "weights": {
                    "alpha": cfg.adaptive.weights.alpha,
                    "beta": cfg.adaptive.weights.beta,
                    "gamma": cfg.adaptive.weights.gamma,
                    "delta": cfg.adaptive.weights.delta,
                    "epsilon": cfg.adaptive.weights.epsilon,
                    "theta": cfg.adaptive.weights.theta,
                },
                "bands": [cfg.adaptive.error_band_small,
                          cfg.adaptive.error_band_large],
                "step": cfg.adaptive.step,
                "adjust_inner": cfg.adaptive.adjust_inner,
            },
        },
        "experiment": {
            "n_subjects": cfg.experiment.n_subjects,
            "crn": cfg.experiment.crn,
            "replications": cfg.experiment.replications,
        },
        "session_timeout": cfg.session_timeout,
        "session_dir": cfg.session_dir,
    }
    return json.dumps(doc, indent=2, sort_keys=True)
