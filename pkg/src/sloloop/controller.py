"""Closed feedback loop: status inference, root-cause and action inference,
post-action evaluation, and the append-only knowledge log.

One logical control thread owns the loop; telemetry ingestion happens
concurrently through the store. Actions are applied one per control round so
their effect on the violated metric stays attributable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

from . import analysis
from .actuation import Actuator, APPLIED
from .analysis import (AnalysisError, DependencyGraph, MetricScore,
                       build_dependency_graph, clean_and_interpolate,
                       extract_critical_metrics, metric_node)
from .descriptor import Descriptor, SloCondition
from .telemetry import MetricNotFound, MetricStore

GOOD = "good"
FAIL = "fail"

DEFAULT_EVAL_WINDOW = 10
DEFAULT_SETTLE_TICKS = 5
DEFAULT_PERIOD = 5
DEFAULT_ANALYSIS_WINDOW = 60
EFFECTIVENESS_EPS = 1e-9


class ControllerError(RuntimeError):
    pass


@dataclass(frozen=True)
class Violation:
    slo_id: str
    component: str
    metric: str
    op: str
    threshold: float
    observed: float


@dataclass(frozen=True)
class SystemStatus:
    verdict: str
    violated: tuple[Violation, ...]
    tick: int
    indeterminate: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.verdict == GOOD


@dataclass(frozen=True)
class RootCause:
    component: str
    metric: str
    combined_score: float
    path: tuple[str, ...]


@dataclass(frozen=True)
class PlannedAction:
    action_id: str
    verb: str
    target: str
    parameter: float
    slo_id: str
    cause: RootCause
    issued_tick: int
    cooldown_until: int


@dataclass(frozen=True)
class KnowledgeRecord:
    violation: str
    cause_component: str
    cause_metric: str
    action: str
    pre_value: float
    post_value: float
    effectiveness: float
    tick: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "KnowledgeRecord":
        return cls(**json.loads(line))


class KnowledgeBase:
    """Append-only record log, optionally persisted as one JSON line per record."""

    def __init__(self, path=None):
        self.records: list[KnowledgeRecord] = []
        self.path = path

    def record(self, rec: KnowledgeRecord) -> None:
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(rec.to_json() + "\n")

    def query(self, slo: str | None = None, action: str | None = None) -> list[KnowledgeRecord]:
        """Chronological records matching the exact filters given."""
        out = []
        for rec in self.records:
            if slo is not None and rec.violation != slo:
                continue
            if action is not None and rec.action != action:
                continue
            out.append(rec)
        return out

    @classmethod
    def load(cls, path) -> "KnowledgeBase":
        kb = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    kb.records.append(KnowledgeRecord.from_json(line))
        kb.path = path
        return kb


class StatusTracker:
    """Debounced SLO evaluation over window means.

    Each condition is evaluated on the mean of its metric over the last
    eval_window ticks. A condition only counts as violated after failing
    debounce_ticks consecutive evaluations; a passing evaluation resets the
    streak, an indeterminate one (no data) freezes it.
    """

    def __init__(self, descriptor: Descriptor, store: MetricStore,
                 eval_window: int = DEFAULT_EVAL_WINDOW, strict: bool = False):
        self.descriptor = descriptor
        self.store = store
        self.eval_window = eval_window
        self.strict = strict
        self._streaks: dict[str, int] = {}

    def reload(self, descriptor: Descriptor) -> None:
        self.descriptor = descriptor
        known = {s.id for s in descriptor.slos}
        self._streaks = {k: v for k, v in self._streaks.items() if k in known}

    def _evaluate_condition(self, slo: SloCondition, tick: int):
        """Returns (outcome, observed) with outcome in {'pass','fail','indeterminate'}."""
        t0 = tick - self.eval_window + 1
        try:
            mean = self.store.window_mean(slo.component, slo.metric, max(0, t0), tick)
        except MetricNotFound:
            mean = None
        if mean is None:
            return "indeterminate", None
        return ("pass" if slo.satisfied_by(mean) else "fail"), mean

    def infer_status(self, tick: int) -> SystemStatus:
        violated = []
        indeterminate = []
        for slo in self.descriptor.slos:
            outcome, observed = self._evaluate_condition(slo, tick)
            if outcome == "indeterminate":
                if self.strict:
                    raise ControllerError(
                        f"no data for slo '{slo.id}' ({slo.component}/{slo.metric}) at tick {tick}")
                indeterminate.append(slo.id)
                continue
            if outcome == "fail":
                streak = self._streaks.get(slo.id, 0) + 1
                self._streaks[slo.id] = streak
                if streak >= slo.debounce_ticks:
                    violated.append(Violation(slo_id=slo.id, component=slo.component,
                                              metric=slo.metric, op=slo.op,
                                              threshold=slo.threshold, observed=observed))
            else:
                self._streaks[slo.id] = 0
        verdict = FAIL if violated else GOOD
        return SystemStatus(verdict=verdict, violated=tuple(violated), tick=tick,
                            indeterminate=tuple(indeterminate))


def infer_root_cause(status: SystemStatus, graph: DependencyGraph,
                     scores: list[MetricScore],
                     threshold: float = analysis.CRITICALITY_THRESHOLD) -> list[RootCause]:
    """Rank anomalous metrics that can reach a violated SLO metric in the graph.

    Falls back to the violated metric's own component when nothing anomalous
    is connected.
    """
    if status.verdict != FAIL:
        return []
    violated_nodes = {metric_node(v.component, v.metric) for v in status.violated}
    candidates = []
    for score in scores:
        if score.score < threshold:
            continue
        path = graph.shortest_path(metric_node(score.component, score.metric), violated_nodes)
        if path is None:
            continue
        candidates.append(RootCause(component=score.component, metric=score.metric,
                                    combined_score=score.combined, path=tuple(path)))
    if candidates:
        candidates.sort(key=lambda c: (-c.combined_score, c.component, c.metric))
        return candidates

    first = status.violated[0]
    by_key = {s.key: s for s in scores}
    entry = by_key.get((first.component, first.metric))
    combined = entry.combined if entry is not None and entry.combined > 0 else analysis.PROXIMITY_EPSILON
    node = metric_node(first.component, first.metric)
    return [RootCause(component=first.component, metric=first.metric,
                      combined_score=combined, path=(node,))]


def infer_actions(descriptor: Descriptor, status: SystemStatus,
                  causes: list[RootCause], cooldowns: dict[str, int],
                  tick: int) -> tuple[list[PlannedAction], list[str]]:
    """Pick at most one action for the top cause; returns (plan, warnings)."""
    if not causes:
        return [], ["no root cause available"]
    cause = causes[0]
    violated_ids = {v.slo_id for v in status.violated}
    for rule in descriptor.remediation:
        if rule.slo not in violated_ids:
            continue
        if not rule.matches(cause.component, cause.metric):
            continue
        specs = [descriptor.find_action(aid) for aid in rule.actions]
        specs.sort(key=lambda a: a.priority)  # stable: entry order breaks ties
        for spec in specs:
            if cooldowns.get(spec.id, 0) > tick:
                continue
            planned = PlannedAction(action_id=spec.id, verb=spec.verb, target=spec.target,
                                    parameter=spec.parameter, slo_id=rule.slo, cause=cause,
                                    issued_tick=tick,
                                    cooldown_until=tick + spec.cooldown_ticks)
            return [planned], []
        return [], [f"all actions for remediation of '{rule.slo}' are cooling down"]
    return [], [f"no remediation entry matches cause {cause.component}/{cause.metric}; "
                "violation is report-only"]


def evaluate_outcome(store: MetricStore, slo: SloCondition, issue_tick: int,
                     *, window: int = DEFAULT_EVAL_WINDOW,
                     settle: int = DEFAULT_SETTLE_TICKS,
                     eps: float = EFFECTIVENESS_EPS) -> tuple[float, float, float]:
    """Relative improvement of the violated metric after an action settles.

    Returns (effectiveness, pre_mean, post_mean). Positive effectiveness means
    the metric moved in the SLO's preferred direction.
    """
    pre0 = max(0, issue_tick - window + 1)
    post0 = issue_tick + settle + 1
    post1 = post0 + window - 1
    pre = store.window_mean(slo.component, slo.metric, pre0, issue_tick)
    post = store.window_mean(slo.component, slo.metric, post0, post1)
    if pre is None or post is None:
        raise ControllerError(
            f"insufficient data to evaluate outcome for '{slo.id}' "
            f"(pre={pre}, post={post})")
    delta = (pre - post) if slo.lower_is_better else (post - pre)
    effectiveness = delta / max(abs(pre), eps)
    return effectiveness, pre, post


@dataclass
class _PendingEvaluation:
    due_tick: int
    action: PlannedAction
    slo: SloCondition


class FeedbackController:
    """Periodic control rounds over a shared metric store.

    Every `period` ticks: collect the recent window, preprocess it, infer
    status, and on failure extract critical metrics, infer the root cause,
    pick one action, and apply it through the actuator. Applied actions are
    re-evaluated after a settle delay and logged to the knowledge base.
    """

    def __init__(self, descriptor: Descriptor, store: MetricStore, actuator: Actuator,
                 *, period: int = DEFAULT_PERIOD,
                 eval_window: int = DEFAULT_EVAL_WINDOW,
                 analysis_window: int = DEFAULT_ANALYSIS_WINDOW,
                 settle: int = DEFAULT_SETTLE_TICKS,
                 seed: int = 0,
                 knowledge: KnowledgeBase | None = None,
                 min_abs_corr: float = analysis.DEFAULT_MIN_ABS_CORR):
        self.descriptor = descriptor
        self.store = store
        self.actuator = actuator
        self.period = period
        self.analysis_window = analysis_window
        self.settle = settle
        self.eval_window = eval_window
        self.seed = seed
        self.min_abs_corr = min_abs_corr
        self.knowledge = knowledge if knowledge is not None else KnowledgeBase()
        self.tracker = StatusTracker(descriptor, store, eval_window=eval_window)
        self.trace: list[dict] = []
        self._cooldowns: dict[str, int] = {}
        self._pending: list[_PendingEvaluation] = []

    # -- trace helpers ------------------------------------------------------

    def _emit(self, tick: int, phase: str, **payload) -> None:
        self.trace.append({"tick": tick, "phase": phase, "payload": payload})

    # -- descriptor hot reload ----------------------------------------------

    def reload_descriptor(self, descriptor: Descriptor, tick: int = -1) -> None:
        """Swap the descriptor without restarting; new SLOs take effect on the
        next control round."""
        self.descriptor = descriptor
        self.tracker.reload(descriptor)
        self._emit(tick, "reload", slos=[s.id for s in descriptor.slos],
                   metrics=len(descriptor.metrics))

    # -- control round ------------------------------------------------------

    def _collect(self, tick: int):
        t0 = max(0, tick - self.analysis_window + 1)
        series = []
        for spec in self.descriptor.metrics:
            try:
                ts = self.store.query_window(spec.component, spec.name, t0, tick)
            except MetricNotFound:
                continue
            if len(ts) >= 2:
                series.append(ts)
        self._emit(tick, "collect", window=[t0, tick], series=len(series))
        return t0, series

    def _preprocess(self, tick: int, t0: int, series):
        batch = []
        for ts in series:
            try:
                clean = clean_and_interpolate(ts)
            except AnalysisError:
                continue
            batch.append(clean)
        # correlation needs one shared grid; keep the series that span the
        # whole collection window
        full = [c for c in batch if c.t0 == t0 and len(c) == tick - t0 + 1]
        self._emit(tick, "preprocess", cleaned=len(batch), aligned=len(full))
        return full

    def _critical(self, tick: int, graph: DependencyGraph):
        window = (max(0, tick - self.analysis_window + 1), tick)
        try:
            scores = extract_critical_metrics(
                self.descriptor, self.store, graph, window,
                feature_window=min(analysis.DEFAULT_FEATURE_WINDOW, self.analysis_window),
                seed=self.seed)
        except AnalysisError as exc:
            self._emit(tick, "critical", error=str(exc), scores=[])
            return []
        self._emit(tick, "critical",
                   scores=[{"component": s.component, "metric": s.metric,
                            "score": round(s.score, 4), "combined": round(s.combined, 4)}
                           for s in scores[:5]])
        return scores

    def on_tick(self, tick: int) -> SystemStatus | None:
        """Advance controller time to `tick`; runs a control round on period
        boundaries and flushes due post-action evaluations every tick."""
        self._flush_evaluations(tick)
        if tick % self.period != 0:
            return None
        return self._control_round(tick)

    def _control_round(self, tick: int) -> SystemStatus:
        t0, series = self._collect(tick)
        batch = self._preprocess(tick, t0, series)
        status = self.tracker.infer_status(tick)
        self._emit(tick, "status", verdict=status.verdict,
                   violated=[{"slo": v.slo_id, "observed": round(v.observed, 6)}
                             for v in status.violated],
                   indeterminate=list(status.indeterminate))
        if status.verdict == GOOD:
            return status

        # Critical-metric extraction is deferred to fail rounds: the forest
        # fit is the expensive step and its output is unused on good rounds.
        graph = build_dependency_graph(self.descriptor, batch, self.min_abs_corr)
        scores = self._critical(tick, graph)
        causes = infer_root_cause(status, graph, scores)
        self._emit(tick, "root_cause",
                   causes=[{"component": c.component, "metric": c.metric,
                            "combined": round(c.combined_score, 4), "path": list(c.path)}
                           for c in causes[:3]])
        plan, warnings = infer_actions(self.descriptor, status, causes, self._cooldowns, tick)
        self._emit(tick, "action",
                   plan=[{"action": p.action_id, "verb": p.verb, "target": p.target,
                          "parameter": p.parameter} for p in plan],
                   warnings=warnings)
        for planned in plan:
            self._apply(tick, planned)
        return status

    def _apply(self, tick: int, planned: PlannedAction) -> None:
        ack = self.actuator.apply(planned)
        # cool down on rejection/failure too, so a broken actuator is not hammered
        self._cooldowns[planned.action_id] = planned.cooldown_until
        self._emit(tick, "apply", action=planned.action_id, verb=planned.verb,
                   target=planned.target, parameter=planned.parameter,
                   ack=ack.status, reason=ack.reason)
        if ack.status == APPLIED:
            slo = self.descriptor.find_slo(planned.slo_id)
            due = tick + self.settle + self.eval_window
            self._pending.append(_PendingEvaluation(due_tick=due, action=planned, slo=slo))

    def _flush_evaluations(self, tick: int, force: bool = False) -> None:
        remaining = []
        for pending in self._pending:
            if pending.due_tick > tick and not force:
                remaining.append(pending)
                continue
            self._evaluate(tick, pending)
        self._pending = remaining

    def _evaluate(self, tick: int, pending: _PendingEvaluation) -> None:
        try:
            effectiveness, pre, post = evaluate_outcome(
                self.store, pending.slo, pending.action.issued_tick,
                window=self.eval_window, settle=self.settle)
        except ControllerError as exc:
            self._emit(tick, "evaluate", action=pending.action.action_id,
                       error=str(exc))
            return
        rec = KnowledgeRecord(violation=pending.slo.id,
                              cause_component=pending.action.cause.component,
                              cause_metric=pending.action.cause.metric,
                              action=pending.action.action_id,
                              pre_value=pre, post_value=post,
                              effectiveness=effectiveness,
                              tick=pending.action.issued_tick)
        self.knowledge.record(rec)
        self._emit(tick, "evaluate", action=pending.action.action_id,
                   effectiveness=round(effectiveness, 6),
                   pre=round(pre, 6), post=round(post, 6))

    def finish(self, tick: int) -> None:
        """Flush evaluations still pending at horizon end (partial post windows)."""
        self._flush_evaluations(tick, force=True)

    def last_status(self) -> str | None:
        for event in reversed(self.trace):
            if event["phase"] == "status":
                return event["payload"]["verdict"]
        return None


def run_loop(descriptor: Descriptor, store: MetricStore, actuator: Actuator,
             *, horizon: int, advance=None, period: int = DEFAULT_PERIOD,
             controller: FeedbackController | None = None, **kwargs) -> list[dict]:
    """Drive a controller for `horizon` ticks.

    `advance(tick)` produces that tick's telemetry (e.g. one simulator step)
    before the controller observes it. Returns the structured loop trace.
    """
    ctl = controller or FeedbackController(descriptor, store, actuator,
                                           period=period, **kwargs)
    for tick in range(horizon):
        if advance is not None:
            advance(tick)
        ctl.on_tick(tick)
    ctl.finish(horizon)
    return ctl.trace


def trace_to_jsonl(trace: list[dict]) -> str:
    return "".join(json.dumps(event) + "\n" for event in trace)
