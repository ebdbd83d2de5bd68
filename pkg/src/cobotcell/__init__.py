"""cobotcell: human-robot collaborative assembly cell simulator.

A discrete-event model of a tower-assembly work cell in which a robot
hands over base cubes under one of three coordination policies (fixed
timing, sensor triggered, adaptive forecasting), an experiment harness
with paired permutation statistics, and a live session service that lets
a real person drive the human side of the task.
"""

from .model import (
    ConfigError, MalformedLogError, RunRecord, SimEvent, TaskConfig,
    derive_metrics, events_from_jsonl, events_to_jsonl, validate_config,
)
from .human import (
    HumanProfile, HumanTrace, PopulationModel, generate_trace,
    replay_trace, sample_subject,
)
from .policies import (
    Action, AdaptiveConfig, PredictorState, SensorPolicyConfig,
    TimingPolicyConfig, Weights, adaptive_schedule, end_of_cycle_repair,
    observe_placement, predict_remaining, sensor_on_pick, timing_schedule,
)
from .engine import (
    ADAPTIVE, POLICY_IDS, SENSOR, TIMING, Engine, EngineConfig,
    ProtocolError, SimulationError, run_once,
)
from .experiment import (
    CalibrationError, CalibrationResult, CalibrationTarget, Comparison,
    ExperimentPlan, ExperimentReport, calibrate, fit_initial_weights,
    holm_adjust, paired_test, run_experiment,
)
from .config import AppConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "Action", "AdaptiveConfig", "AppConfig", "CalibrationError",
    "CalibrationResult", "CalibrationTarget", "Comparison", "ConfigError",
    "Engine", "EngineConfig", "ExperimentPlan", "ExperimentReport",
    "HumanProfile", "HumanTrace", "MalformedLogError", "PopulationModel",
    "PredictorState", "ProtocolError", "RunRecord", "SensorPolicyConfig",
    "SimEvent", "SimulationError", "TaskConfig", "TimingPolicyConfig",
    "Weights", "ADAPTIVE", "POLICY_IDS", "SENSOR", "TIMING",
    "adaptive_schedule", "calibrate", "derive_metrics", "end_of_cycle_repair",
    "events_from_jsonl", "events_to_jsonl", "fit_initial_weights",
    "generate_trace", "holm_adjust",
    "load_config", "observe_placement", "paired_test", "predict_remaining",
    "replay_trace", "run_experiment", "run_once", "sample_subject",
    "sensor_on_pick", "timing_schedule", "validate_config",
]
