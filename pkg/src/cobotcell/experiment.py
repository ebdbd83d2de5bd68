"""Blocked-design experiment harness: subjects x policies, paired statistics,
calibration of the population pace against a target total time.

Each simulated subject experiences all three policies in a random order
(a randomized block). Comparisons are paired sign-flip permutation tests
with Holm correction across the three policy pairs per measure; with
common random numbers the same realized trace is shared across policies
for a subject, which strictly reduces the variance of paired differences.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .engine import ADAPTIVE, POLICY_IDS, SENSOR, TIMING, Engine, EngineConfig
from .human import HumanTrace, PopulationModel, generate_trace, sample_subject
from .model import ConfigError, RunRecord, TaskConfig

SHARED_TRACE = "shared_trace"
INDEPENDENT_TRACES = "independent_traces"

MEASURES = ("total_time", "total_idle")


class CalibrationError(RuntimeError):
    def __init__(self, message: str, best: "CalibrationResult"):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class ExperimentPlan:
    n_subjects: int = 80
    crn_mode: str = SHARED_TRACE
    seed: int = 0
    replications: int = 1

    def validate(self) -> None:
        if self.n_subjects < 2:
            raise ConfigError("n_subjects must be >= 2")
        if self.crn_mode not in (SHARED_TRACE, INDEPENDENT_TRACES):
            raise ConfigError(f"unknown crn_mode {self.crn_mode!r}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")


@dataclass
class RunSummary:
    subject_id: str
    policy: str
    seed: int
    total_time: float
    human_idle: float
    robot_idle: float
    total_idle: float

    def value(self, measure: str) -> float:
        if measure == "total_time":
            return self.total_time
        if measure == "total_idle":
            return self.total_idle
        raise ConfigError(f"unknown measure {measure!r}")


@dataclass
class Comparison:
    measure: str
    policy_a: str          # baseline: the larger mean
    policy_b: str
    mean_a: float
    mean_b: float
    mean_diff: float
    pct_diff: float        # reduction relative to the baseline mean
    mean_subject_ratio: float
    p_one_sided: float
    p_two_sided: float
    p_holm: float
    significant: bool


@dataclass
class ExperimentReport:
    plan: ExperimentPlan
    runs: list[RunSummary]
    per_policy: dict[str, dict[str, float]]
    comparisons: list[Comparison]
    aborted: bool = False
    notes: dict = field(default_factory=dict)

    def policy_values(self, policy: str, measure: str) -> list[float]:
        # Ordered by subject for pairing.
        return [r.value(measure) for r in self.runs if r.policy == policy]

    def comparison(self, measure: str, a: str, b: str) -> Comparison:
        for c in self.comparisons:
            if c.measure == measure and {c.policy_a, c.policy_b} == {a, b}:
                return c
        raise KeyError((measure, a, b))

    def to_dict(self) -> dict:
        return {
            "plan": {
                "n_subjects": self.plan.n_subjects,
                "crn_mode": self.plan.crn_mode,
                "seed": self.plan.seed,
                "replications": self.plan.replications,
            },
            "aborted": self.aborted,
            "notes": self.notes,
            "per_policy": self.per_policy,
            "comparisons": [
                {
                    "measure": c.measure,
                    "policy_a": c.policy_a,
                    "policy_b": c.policy_b,
                    "mean_a_ms": round(c.mean_a * 1000),
                    "mean_b_ms": round(c.mean_b * 1000),
                    "mean_diff_ms": round(c.mean_diff * 1000),
                    "pct_diff": c.pct_diff,
                    "mean_subject_ratio": c.mean_subject_ratio,
                    "p_one_sided": c.p_one_sided,
                    "p_two_sided": c.p_two_sided,
                    "p_holm": c.p_holm,
                    "significant": c.significant,
                }
                for c in self.comparisons
            ],
            "runs": [
                {
                    "subject_id": r.subject_id,
                    "policy": r.policy,
                    "seed": r.seed,
                    "total_time_ms": round(r.total_time * 1000),
                    "human_idle_ms": round(r.human_idle * 1000),
                    "robot_idle_ms": round(r.robot_idle * 1000),
                    "total_idle_ms": round(r.total_idle * 1000),
                }
                for r in self.runs
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def runs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subject_id", "policy", "total_time_ms", "human_idle_ms",
                    "robot_idle_ms", "total_idle_ms"])
        for r in self.runs:
            w.writerow([r.subject_id, r.policy, round(r.total_time * 1000),
                        round(r.human_idle * 1000), round(r.robot_idle * 1000),
                        round(r.total_idle * 1000)])
        return buf.getvalue()

    def comparisons_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["policy_a", "policy_b", "measure", "mean_a_ms", "mean_b_ms",
                    "pct_diff", "p_value"])
        for c in self.comparisons:
            w.writerow([c.policy_a, c.policy_b, c.measure,
                        round(c.mean_a * 1000), round(c.mean_b * 1000),
                        f"{c.pct_diff:.6f}", f"{c.p_one_sided:.6g}"])
        return buf.getvalue()


# -- paired permutation statistics -------------------------------------------

_EXACT_LIMIT = 20
_MC_RESAMPLES = 100_000


def _sign_means(d: np.ndarray, signs: np.ndarray) -> np.ndarray:
    return signs.astype(np.float64) @ d / d.size


def _exact_sign_means(d: np.ndarray) -> np.ndarray:
    n = d.size
    total = 1 << n
    out = np.empty(total, dtype=np.float64)
    chunk = 1 << 16
    bitcols = np.arange(n, dtype=np.uint32)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.uint32)
        bits = ((idx[:, None] >> bitcols) & 1).astype(np.int8)
        out[start:start + idx.size] = _sign_means(d, bits * 2 - 1)
    return out


def paired_test(diffs, sided: str = "two", method: str = "auto",
                n_resamples: int = _MC_RESAMPLES, seed: int = 0) -> float:
    """Sign-flip permutation p-value for the mean of paired differences.

    Exact enumeration of all 2**n sign assignments for n <= 20 (or when
    forced), Monte-Carlo with a fixed seed otherwise. The identity
    assignment is always part of the reference distribution.
    """
    d = np.asarray(list(diffs), dtype=np.float64)
    if d.size < 2:
        raise ConfigError("paired_test needs at least 2 observations")
    if sided not in ("one", "two"):
        raise ConfigError("sided must be 'one' or 'two'")
    if method not in ("auto", "exact", "mc"):
        raise ConfigError("method must be 'auto', 'exact' or 'mc'")
    if method == "exact" or (method == "auto" and d.size <= _EXACT_LIMIT):
        means = _exact_sign_means(d)
    else:
        rng = np.random.default_rng(seed)
        signs = rng.integers(0, 2, size=(n_resamples, d.size),
                             dtype=np.int8) * 2 - 1
        means = _sign_means(d, signs)
    obs = float(np.mean(d))
    eps = 1e-12 * max(1.0, abs(obs))
    if sided == "one":
        return float(np.mean(means >= obs - eps))
    return float(np.mean(np.abs(means) >= abs(obs) - eps))


def holm_adjust(pvalues: list[float]) -> list[float]:
    """Holm step-down adjusted p-values."""
    m = len(pvalues)
    order = sorted(range(m), key=lambda i: pvalues[i])
    adjusted = [0.0] * m
    running = 0.0
    for rank, i in enumerate(order):
        running = max(running, min(1.0, (m - rank) * pvalues[i]))
        adjusted[i] = running
    return adjusted


# -- experiment -----------------------------------------------------------------

def _subject_seeds(plan: ExperimentPlan, i: int) -> tuple[int, np.ndarray, int]:
    # One shared-trace seed per replication plus three independent-trace
    # seeds per replication; generated up front so both modes draw from
    # the same deterministic stream.
    n_trace = 4 * plan.replications
    ss = np.random.SeedSequence(entropy=plan.seed, spawn_key=(i,))
    state = ss.generate_state(2 + n_trace)
    profile_seed = int(state[0])
    order_seed = int(state[1])
    return profile_seed, state[2:], order_seed


def run_experiment(plan: ExperimentPlan, engine_cfg: EngineConfig,
                   population: PopulationModel) -> ExperimentReport:
    """Run the full blocked design and aggregate paired comparisons."""
    plan.validate()
    engine_cfg.validate()
    population.validate()

    runs: list[RunSummary] = []
    by_policy: dict[str, list[RunSummary]] = {p: [] for p in POLICY_IDS}
    aborted = False

    for i in range(plan.n_subjects):
        profile_seed, trace_seeds, order_seed = _subject_seeds(plan, i)
        subject_id = f"s{i:03d}"
        profile = sample_subject(population, profile_seed, subject_id=subject_id)
        order = list(POLICY_IDS)
        np.random.default_rng(order_seed).shuffle(order)

        for rep_idx in range(plan.replications):
            shared = None
            if plan.crn_mode == SHARED_TRACE:
                shared = generate_trace(profile, engine_cfg.task,
                                        int(trace_seeds[rep_idx]))
            for round_idx, policy in enumerate(order):
                if shared is not None:
                    trace = shared
                else:
                    seed_idx = plan.replications + 3 * rep_idx + round_idx
                    trace = generate_trace(profile, engine_cfg.task,
                                           int(trace_seeds[seed_idx]))
                cfg = replace(engine_cfg, policy_id=policy,
                              fetch_reaction=profile.fetch_reaction)
                try:
                    rec = Engine(cfg, trace, subject_id=subject_id,
                                 seed=plan.seed).run()
                except Exception:
                    aborted = True
                    continue
                summary = RunSummary(
                    subject_id=subject_id, policy=policy, seed=plan.seed,
                    total_time=rec.total_time, human_idle=rec.human_idle,
                    robot_idle=rec.robot_idle, total_idle=rec.total_idle)
                runs.append(summary)
                by_policy[policy].append(summary)

    per_policy = {}
    for p in POLICY_IDS:
        rows = by_policy[p]
        for measure in MEASURES:
            vals = np.array([r.value(measure) for r in rows])
            per_policy.setdefault(p, {})
            per_policy[p][f"mean_{measure}_ms"] = (
                round(float(vals.mean()) * 1000) if vals.size else 0)
            per_policy[p][f"sd_{measure}_ms"] = (
                round(float(vals.std(ddof=1)) * 1000) if vals.size > 1 else 0)
        per_policy[p]["n"] = len(rows)

    comparisons = _compare(runs, plan)
    report = ExperimentReport(
        plan=plan, runs=runs, per_policy=per_policy, comparisons=comparisons,
        aborted=aborted,
        notes={
            "pct_diff_convention":
                "reduction relative to the larger (baseline) policy mean",
            "ratio_form":
                "pct_diff is a ratio of means; mean_subject_ratio is the "
                "mean of per-subject ratios and is reported alongside",
        })
    return report


def _compare(runs: list[RunSummary], plan: ExperimentPlan) -> list[Comparison]:
    # Cell value = the subject's mean over replications for that policy.
    acc: dict[tuple[str, str], dict[str, list[float]]] = {}
    for r in runs:
        cell = acc.setdefault((r.policy, r.subject_id),
                              {m: [] for m in MEASURES})
        for m in MEASURES:
            cell[m].append(r.value(m))
    values = {
        key: {m: float(np.mean(v)) for m, v in cell.items()}
        for key, cell in acc.items()
    }

    subjects = sorted({r.subject_id for r in runs})
    pairs = [(TIMING, SENSOR), (TIMING, ADAPTIVE), (SENSOR, ADAPTIVE)]
    comparisons: list[Comparison] = []
    for measure in MEASURES:
        raw: list[Comparison] = []
        for x, y in pairs:
            xs, ys = [], []
            for s in subjects:
                if (x, s) in values and (y, s) in values:
                    xs.append(values[(x, s)][measure])
                    ys.append(values[(y, s)][measure])
            if len(xs) < 2:
                continue
            mean_x, mean_y = float(np.mean(xs)), float(np.mean(ys))
            # Baseline a is the policy with the larger mean.
            if mean_x >= mean_y:
                a, b, mean_a, mean_b = x, y, mean_x, mean_y
                diffs = [u - v for u, v in zip(xs, ys)]
                ratios = [v / u for u, v in zip(xs, ys) if u > 0]
            else:
                a, b, mean_a, mean_b = y, x, mean_y, mean_x
                diffs = [v - u for u, v in zip(xs, ys)]
                ratios = [u / v for u, v in zip(xs, ys) if v > 0]
            p_one = paired_test(diffs, sided="one", seed=plan.seed)
            p_two = paired_test(diffs, sided="two", seed=plan.seed)
            raw.append(Comparison(
                measure=measure, policy_a=a, policy_b=b,
                mean_a=mean_a, mean_b=mean_b, mean_diff=mean_a - mean_b,
                pct_diff=(mean_a - mean_b) / mean_a if mean_a else 0.0,
                mean_subject_ratio=(
                    1.0 - float(np.mean(ratios)) if ratios else 0.0),
                p_one_sided=p_one, p_two_sided=p_two,
                p_holm=1.0, significant=False))
        adjusted = holm_adjust([c.p_one_sided for c in raw])
        for c, p in zip(raw, adjusted):
            c.p_holm = p
            c.significant = p < 0.05
        comparisons.extend(raw)
    return comparisons


# -- calibration ------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationTarget:
    target_total_time: float = 317.0
    tolerance: float = 0.10

    def validate(self) -> None:
        if not self.target_total_time > 0:
            raise ConfigError("target_total_time must be > 0")
        if not 0 < self.tolerance < 1:
            raise ConfigError("tolerance must be in (0, 1)")


@dataclass
class CalibrationResult:
    pop_mean_place_b: float
    achieved_mean_total: float
    rel_error: float
    evaluations: int
    weights: Optional[tuple[float, float, float]] = None
    mean_prediction_error: Optional[float] = None

    def to_dict(self) -> dict:
        doc = {
            "pop_mean_place_b": self.pop_mean_place_b,
            "achieved_mean_total_ms": round(self.achieved_mean_total * 1000),
            "rel_error": self.rel_error,
            "evaluations": self.evaluations,
        }
        if self.weights is not None:
            doc["outer_weights"] = list(self.weights)
            doc["mean_prediction_error_ms"] = round(
                self.mean_prediction_error * 1000)
        return doc


def _mean_sensor_total(pop_mean: float, engine_cfg: EngineConfig,
                       population: PopulationModel, n_subjects: int,
                       seed: int) -> float:
    pop = replace(population, pop_mean_place_b=pop_mean)
    cfg = replace(engine_cfg, policy_id=SENSOR,
                  population_mean_place_b=pop_mean)
    totals = []
    for i in range(n_subjects):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(i,))
        s_profile, s_trace = (int(x) for x in ss.generate_state(2))
        profile = sample_subject(pop, s_profile, subject_id=f"c{i:03d}")
        trace = generate_trace(profile, cfg.task, s_trace)
        run_cfg = replace(cfg, fetch_reaction=profile.fetch_reaction)
        totals.append(Engine(run_cfg, trace).run().total_time)
    return float(np.mean(totals))


def calibrate(target: CalibrationTarget, engine_cfg: EngineConfig,
              population: PopulationModel, n_subjects: int = 200,
              seed: int = 0,
              grid: Optional[np.ndarray] = None) -> CalibrationResult:
    """Fit the population per-cube mean so the sensor-policy mean total
    time lands on the target; grid search with a local refinement pass.

    The defaults are checked first, so an already-calibrated model
    returns immediately.
    """
    target.validate()
    engine_cfg.validate()
    evaluations = 0

    def evaluate(m: float) -> float:
        nonlocal evaluations
        evaluations += 1
        return _mean_sensor_total(m, engine_cfg, population, n_subjects, seed)

    def result(m: float, total: float) -> CalibrationResult:
        rel = abs(total - target.target_total_time) / target.target_total_time
        return CalibrationResult(
            pop_mean_place_b=m, achieved_mean_total=total, rel_error=rel,
            evaluations=evaluations)

    default_mean = population.pop_mean_place_b
    best = result(default_mean, evaluate(default_mean))
    if best.rel_error <= target.tolerance:
        return best

    if grid is None:
        grid = np.arange(0.75, 4.26, 0.25)
    for m in grid:
        r = result(float(m), evaluate(float(m)))
        if r.rel_error < best.rel_error:
            best = r
    fine = np.arange(best.pop_mean_place_b - 0.20,
                     best.pop_mean_place_b + 0.21, 0.05)
    for m in fine:
        if m <= 0.1:
            continue
        r = result(float(m), evaluate(float(m)))
        if r.rel_error < best.rel_error:
            best = r

    if best.rel_error > target.tolerance:
        raise CalibrationError(
            f"no pop_mean_place_b in range meets the {target.tolerance:.0%} "
            f"tolerance; best rel_error={best.rel_error:.3f} at "
            f"pop_mean_place_b={best.pop_mean_place_b:.2f}", best)
    return best


def fit_initial_weights(engine_cfg: EngineConfig, population: PopulationModel,
                        n_subjects: int = 40, seed: int = 0,
                        step: float = 0.1) -> tuple[tuple[float, float, float],
                                                    float]:
    """Optional second calibration stage: choose the outer weight triple
    that minimizes the mean absolute cycle-forecast error of the adaptive
    policy over a small simulated cohort."""
    from .policies import AdaptiveConfig, Weights

    pop = replace(population,
                  pop_mean_place_b=engine_cfg.population_mean_place_b)

    def mean_abs_error(weights: Weights) -> float:
        cfg = replace(engine_cfg, policy_id=ADAPTIVE,
                      adaptive=replace(engine_cfg.adaptive, weights=weights))
        errors = []
        for i in range(n_subjects):
            ss = np.random.SeedSequence(entropy=seed, spawn_key=(1000 + i,))
            s_prof, s_trace = (int(x) for x in ss.generate_state(2))
            profile = sample_subject(pop, s_prof, subject_id=f"w{i:03d}")
            trace = generate_trace(profile, cfg.task, s_trace)
            rec = Engine(replace(cfg, fetch_reaction=profile.fetch_reaction),
                         trace).run()
            for cyc in rec.per_cycle:
                if cyc.predicted_time is not None:
                    actual = sum(trace.cycles[cyc.cycle_index].place_b_times)
                    errors.append(abs(cyc.predicted_time - actual))
        return float(np.mean(errors))

    base = engine_cfg.adaptive.weights
    best_triple = base.outer()
    best_err = mean_abs_error(base)
    grid = np.arange(0.05, 0.91, step)
    for alpha in grid:
        for beta in grid:
            gamma = 1.0 - alpha - beta
            if not (0.05 - 1e-9 <= gamma <= 0.90 + 1e-9):
                continue
            w = Weights(round(float(alpha), 4), round(float(beta), 4),
                        round(float(gamma), 4),
                        base.delta, base.epsilon, base.theta)
            err = mean_abs_error(w)
            if err < best_err:
                best_err, best_triple = err, w.outer()
    return best_triple, best_err
