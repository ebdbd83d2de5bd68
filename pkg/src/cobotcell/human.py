"""Human side of the task: subject sampling, trace generation, trace replay.

A subject's latent pace is a per-cube mean with lognormal within-subject
noise and an optional per-cube drift (negative drift models learning,
positive models fatigue). Realized traces are immutable and fully
determined by (profile, task config, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import MS, ConfigError, TaskConfig

MIN_MEAN_PLACE_B = 0.5


@dataclass(frozen=True)
class HumanProfile:
    subject_id: str
    mean_place_b: float
    cv: float = 0.25
    drift_per_cube: float = 0.0
    mean_place_a: float = 4.0
    fetch_reaction: float = 1.0

    def validate(self) -> None:
        if not self.mean_place_b > 0:
            raise ConfigError("mean_place_b must be > 0")
        if self.cv < 0:
            raise ConfigError("cv must be >= 0")
        if abs(self.drift_per_cube) >= 0.05:
            raise ConfigError("|drift_per_cube| must be < 0.05")
        if not self.mean_place_a > 0:
            raise ConfigError("mean_place_a must be > 0")
        if self.fetch_reaction < 0:
            raise ConfigError("fetch_reaction must be >= 0")


@dataclass(frozen=True)
class PopulationModel:
    """Distribution the simulated cohort is drawn from.

    ``pop_mean_place_b`` is the ground truth behind the predictor's
    population term; the per-subject cv and drift laws are degenerate by
    default and exist as calibration knobs.
    """

    pop_mean_place_b: float = 2.8
    pop_sd: float = 0.45
    cv_mean: float = 0.25
    cv_sd: float = 0.0
    drift_mean: float = 0.0
    drift_sd: float = 0.0
    mean_place_a: float = 4.0
    fetch_reaction: float = 1.0

    def validate(self) -> None:
        if not self.pop_mean_place_b > 0:
            raise ConfigError("pop_mean_place_b must be > 0")
        if self.pop_sd < 0:
            raise ConfigError("pop_sd must be >= 0")
        if self.cv_mean < 0 or self.cv_sd < 0:
            raise ConfigError("cv distribution must be non-negative")
        if self.drift_sd < 0:
            raise ConfigError("drift_sd must be >= 0")


@dataclass(frozen=True)
class TraceCycle:
    place_a_time: float
    place_b_times: tuple[float, ...]
    take_delay: Optional[float] = None  # recorded sessions only


@dataclass(frozen=True)
class HumanTrace:
    subject_id: str
    provenance: str
    cycles: tuple[TraceCycle, ...]

    def validate(self, cfg: TaskConfig) -> None:
        if len(self.cycles) != cfg.cycles_total:
            raise ConfigError(
                f"trace has {len(self.cycles)} cycles, config expects "
                f"{cfg.cycles_total}")
        for c in self.cycles:
            if len(c.place_b_times) != cfg.cubes_b_per_cycle:
                raise ConfigError(
                    f"trace cycle has {len(c.place_b_times)} placements, "
                    f"config expects {cfg.cubes_b_per_cycle}")
            if c.place_a_time <= 0 or any(t <= 0 for t in c.place_b_times):
                raise ConfigError("all trace times must be > 0")

    def placement_durations(self) -> list[float]:
        out: list[float] = []
        for c in self.cycles:
            out.extend(c.place_b_times)
        return out

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "provenance": self.provenance,
            "cycles": [
                {
                    "place_a_ms": round(c.place_a_time * MS),
                    "place_b_ms": [round(t * MS) for t in c.place_b_times],
                    **({"take_delay_ms": round(c.take_delay * MS)}
                       if c.take_delay is not None else {}),
                }
                for c in self.cycles
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "HumanTrace":
        cycles = tuple(
            TraceCycle(
                place_a_time=c["place_a_ms"] / MS,
                place_b_times=tuple(t / MS for t in c["place_b_ms"]),
                take_delay=(c["take_delay_ms"] / MS
                            if "take_delay_ms" in c else None),
            )
            for c in d["cycles"]
        )
        return cls(subject_id=d["subject_id"], provenance=d["provenance"],
                   cycles=cycles)

    @classmethod
    def from_json(cls, text: str) -> "HumanTrace":
        return cls.from_dict(json.loads(text))


def sample_subject(pop: PopulationModel, seed: int,
                   subject_id: Optional[str] = None) -> HumanProfile:
    """Draw one subject from the population, deterministically for a seed.

    The per-cube mean is normal truncated below at 0.5 s (rejection
    sampling; the default population puts negligible mass down there).
    """
    pop.validate()
    rng = np.random.default_rng(seed)
    if pop.pop_sd == 0:
        mean_b = pop.pop_mean_place_b
    else:
        mean_b = float(rng.normal(pop.pop_mean_place_b, pop.pop_sd))
        while mean_b < MIN_MEAN_PLACE_B:
            mean_b = float(rng.normal(pop.pop_mean_place_b, pop.pop_sd))
    cv = max(0.0, float(rng.normal(pop.cv_mean, pop.cv_sd))) if pop.cv_sd else pop.cv_mean
    drift = float(rng.normal(pop.drift_mean, pop.drift_sd)) if pop.drift_sd else pop.drift_mean
    drift = max(-0.049, min(0.049, drift))
    return HumanProfile(
        subject_id=subject_id or f"s{seed}",
        mean_place_b=mean_b,
        cv=cv,
        drift_per_cube=drift,
        mean_place_a=pop.mean_place_a,
        fetch_reaction=pop.fetch_reaction,
    )


def _lognormal(rng: np.random.Generator, mean: float, cv: float) -> float:
    # Parameterized so the draw has the requested arithmetic mean and cv.
    if cv == 0:
        return mean
    sigma2 = math.log(1.0 + cv * cv)
    mu = math.log(mean) - sigma2 / 2.0
    return float(rng.lognormal(mu, math.sqrt(sigma2)))


def generate_trace(profile: HumanProfile, cfg: TaskConfig, seed: int) -> HumanTrace:
    """Realize a subject's behavior for one run."""
    profile.validate()
    cfg.validate()
    rng = np.random.default_rng(seed)
    cycles = []
    k = 0  # cube index across the whole run; drift compounds per cube
    for _ in range(cfg.cycles_total):
        place_a = _lognormal(rng, profile.mean_place_a, profile.cv)
        place_bs = []
        for _ in range(cfg.cubes_b_per_cycle):
            mean_k = profile.mean_place_b * (1.0 + profile.drift_per_cube) ** k
            place_bs.append(_lognormal(rng, mean_k, profile.cv))
            k += 1
        cycles.append(TraceCycle(place_a_time=place_a,
                                 place_b_times=tuple(place_bs)))
    return HumanTrace(subject_id=profile.subject_id,
                      provenance=f"sampled(seed={seed})",
                      cycles=tuple(cycles))


def replay_trace(trace: HumanTrace, cfg: TaskConfig) -> list[tuple[str, float]]:
    """Flatten a trace into the ordered (action, duration) stream the
    engine consumes: one place_a and cubes_b_per_cycle placements per cycle."""
    trace.validate(cfg)
    stream: list[tuple[str, float]] = []
    for c in trace.cycles:
        stream.append(("place_a", c.place_a_time))
        for t in c.place_b_times:
            stream.append(("place_b", t))
    return stream
