"""SLO-aware observability feedback loop with a deterministic pipeline simulator."""

from .descriptor import (Descriptor, DescriptorError, load_descriptor,
                         parse_descriptor, render_descriptor, validate_remediation)
from .telemetry import MetricNotFound, MetricStore, Sample, TelemetryError, TimeSeries
from .analysis import (AnalysisError, CleanSeries, DependencyGraph, IsolationForestModel,
                       MetricScore, anomaly_score, build_dependency_graph,
                       clean_and_interpolate, correlation, extract_critical_metrics,
                       fit_isolation_forest, minmax_normalize)
from .actuation import Ack, Actuator, LoggingActuator
from .controller import (FeedbackController, KnowledgeBase, KnowledgeRecord,
                         PlannedAction, RootCause, StatusTracker, SystemStatus,
                         evaluate_outcome, infer_actions, infer_root_cause, run_loop)
from .sim import (CameraSim, FaultSpec, NodeProfile, RecognizerSim, SimError,
                  SimWorld, load_scenario, load_scenario_file, scenario_from_dict)

__version__ = "0.1.0"
