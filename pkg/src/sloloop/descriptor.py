"""Declarative application model: components, metrics, SLOs, actions, remediation.

The descriptor is a single JSON document provided by the application developer.
It is parsed into immutable dataclasses, fully cross-validated, and shared
read-only by every other module.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

COMPONENT_KINDS = ("host", "pod", "service", "metric-source")
METRIC_LEVELS = ("application", "infrastructure")
SLO_OPS = ("<", "<=", ">", ">=", "==")

INFRASTRUCTURE_VERBS = ("scale_replicas", "set_resource_limit")
APPLICATION_VERBS = ("set_frame_rate", "switch_model", "set_queue_cap")
ACTION_VERBS = INFRASTRUCTURE_VERBS + APPLICATION_VERBS

WILDCARD = "*"

DEFAULT_DEBOUNCE_TICKS = 3
DEFAULT_COOLDOWN_TICKS = 10


class DescriptorError(ValueError):
    """Raised when a descriptor document fails parsing or cross-validation."""


@dataclass(frozen=True)
class ComponentRef:
    id: str
    kind: str


@dataclass(frozen=True)
class MetricSpec:
    name: str
    component: str
    level: str
    unit: str = ""

    @property
    def key(self) -> tuple[str, str]:
        return (self.component, self.name)


@dataclass(frozen=True)
class SloCondition:
    id: str
    metric: str
    component: str
    op: str
    threshold: float
    debounce_ticks: int = DEFAULT_DEBOUNCE_TICKS

    def satisfied_by(self, value: float) -> bool:
        if self.op == "<":
            return value < self.threshold
        if self.op == "<=":
            return value <= self.threshold
        if self.op == ">":
            return value > self.threshold
        if self.op == ">=":
            return value >= self.threshold
        return value == self.threshold

    @property
    def lower_is_better(self) -> bool:
        # Equality SLOs are treated as lower-is-better for outcome evaluation.
        return self.op in ("<", "<=", "==")


@dataclass(frozen=True)
class ActionSpec:
    id: str
    level: str
    verb: str
    target: str
    parameter: float
    priority: int = 0
    cooldown_ticks: int = DEFAULT_COOLDOWN_TICKS


@dataclass(frozen=True)
class RemediationRule:
    slo: str
    cause_component: str = WILDCARD
    cause_metric: str = WILDCARD
    actions: tuple[str, ...] = ()

    def matches(self, component: str, metric: str) -> bool:
        comp_ok = self.cause_component == WILDCARD or self.cause_component == component
        met_ok = self.cause_metric == WILDCARD or self.cause_metric == metric
        return comp_ok and met_ok


@dataclass(frozen=True)
class Descriptor:
    components: tuple[ComponentRef, ...] = ()
    metrics: tuple[MetricSpec, ...] = ()
    slos: tuple[SloCondition, ...] = ()
    actions: tuple[ActionSpec, ...] = ()
    dependencies: tuple[tuple[str, str], ...] = ()
    remediation: tuple[RemediationRule, ...] = field(default=())

    def component_ids(self) -> set[str]:
        return {c.id for c in self.components}

    def metric_keys(self) -> set[tuple[str, str]]:
        return {m.key for m in self.metrics}

    def find_slo(self, slo_id: str) -> SloCondition:
        for s in self.slos:
            if s.id == slo_id:
                return s
        raise KeyError(slo_id)

    def find_action(self, action_id: str) -> ActionSpec:
        for a in self.actions:
            if a.id == action_id:
                return a
        raise KeyError(action_id)


def _require(doc: dict, key: str, typ, where: str):
    if key not in doc:
        raise DescriptorError(f"{where}: missing required key '{key}'")
    value = doc[key]
    if not isinstance(value, typ):
        raise DescriptorError(f"{where}: key '{key}' must be {typ.__name__}, got {type(value).__name__}")
    return value


def _finite_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DescriptorError(f"{where}: expected a number, got {type(value).__name__}")
    value = float(value)
    if not math.isfinite(value):
        raise DescriptorError(f"{where}: value must be finite")
    return value


def _int_field(doc: dict, key: str, default: int, where: str, minimum: int) -> int:
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise DescriptorError(f"{where}: '{key}' must be an integer")
    if value < minimum:
        raise DescriptorError(f"{where}: '{key}' must be >= {minimum}")
    return value


def _token(value, allowed: tuple[str, ...], what: str, where: str) -> str:
    if value not in allowed:
        raise DescriptorError(f"{where}: invalid {what} token {value!r} (allowed: {', '.join(allowed)})")
    return value


def descriptor_from_dict(doc: dict) -> Descriptor:
    """Build and cross-validate a Descriptor from an already-decoded document."""
    if not isinstance(doc, dict):
        raise DescriptorError(f"descriptor root must be an object, got {type(doc).__name__}")

    components = []
    seen_ids: set[str] = set()
    for i, item in enumerate(_require(doc, "components", list, "descriptor")):
        where = f"components[{i}]"
        if not isinstance(item, dict):
            raise DescriptorError(f"{where}: must be an object")
        cid = _require(item, "id", str, where)
        if not cid:
            raise DescriptorError(f"{where}: id must be non-empty")
        if cid in seen_ids:
            raise DescriptorError(f"{where}: duplicate component id '{cid}'")
        seen_ids.add(cid)
        kind = _token(_require(item, "kind", str, where), COMPONENT_KINDS, "kind", where)
        components.append(ComponentRef(id=cid, kind=kind))

    component_ids = {c.id for c in components}

    metrics = []
    seen_keys: set[tuple[str, str]] = set()
    for i, item in enumerate(doc.get("metrics", [])):
        where = f"metrics[{i}]"
        if not isinstance(item, dict):
            raise DescriptorError(f"{where}: must be an object")
        name = _require(item, "name", str, where)
        comp = _require(item, "component", str, where)
        if comp not in component_ids:
            raise DescriptorError(f"{where}: dangling reference to component '{comp}'")
        key = (comp, name)
        if key in seen_keys:
            raise DescriptorError(f"{where}: duplicate metric '{name}' on component '{comp}'")
        seen_keys.add(key)
        level = _token(_require(item, "level", str, where), METRIC_LEVELS, "level", where)
        unit = item.get("unit", "")
        if not isinstance(unit, str):
            raise DescriptorError(f"{where}: 'unit' must be a string")
        metrics.append(MetricSpec(name=name, component=comp, level=level, unit=unit))

    metric_keys = {m.key for m in metrics}

    slos = []
    seen_slos: set[str] = set()
    for i, item in enumerate(doc.get("slos", [])):
        where = f"slos[{i}]"
        if not isinstance(item, dict):
            raise DescriptorError(f"{where}: must be an object")
        sid = _require(item, "id", str, where)
        if sid in seen_slos:
            raise DescriptorError(f"{where}: duplicate slo id '{sid}'")
        seen_slos.add(sid)
        metric = _require(item, "metric", str, where)
        comp = _require(item, "component", str, where)
        if (comp, metric) not in metric_keys:
            raise DescriptorError(f"{where}: dangling reference to metric '{metric}' on component '{comp}'")
        op = _token(_require(item, "op", str, where), SLO_OPS, "op", where)
        threshold = _finite_number(_require(item, "threshold", (int, float), where), f"{where}.threshold")
        debounce = _int_field(item, "debounce_ticks", DEFAULT_DEBOUNCE_TICKS, where, minimum=1)
        slos.append(SloCondition(id=sid, metric=metric, component=comp, op=op,
                                 threshold=threshold, debounce_ticks=debounce))

    actions = []
    seen_actions: set[str] = set()
    for i, item in enumerate(doc.get("actions", [])):
        where = f"actions[{i}]"
        if not isinstance(item, dict):
            raise DescriptorError(f"{where}: must be an object")
        aid = _require(item, "id", str, where)
        if aid in seen_actions:
            raise DescriptorError(f"{where}: duplicate action id '{aid}'")
        seen_actions.add(aid)
        level = _token(_require(item, "level", str, where), METRIC_LEVELS, "level", where)
        verb = _token(_require(item, "verb", str, where), ACTION_VERBS, "verb", where)
        expected = INFRASTRUCTURE_VERBS if level == "infrastructure" else APPLICATION_VERBS
        if verb not in expected:
            raise DescriptorError(f"{where}: verb '{verb}' is not a {level}-level verb")
        target = _require(item, "target", str, where)
        if target not in component_ids:
            raise DescriptorError(f"{where}: dangling reference to target '{target}'")
        parameter = _finite_number(_require(item, "parameter", (int, float), where), f"{where}.parameter")
        priority = item.get("priority", 0)
        if isinstance(priority, bool) or not isinstance(priority, int):
            raise DescriptorError(f"{where}: 'priority' must be an integer")
        cooldown = _int_field(item, "cooldown_ticks", DEFAULT_COOLDOWN_TICKS, where, minimum=0)
        actions.append(ActionSpec(id=aid, level=level, verb=verb, target=target,
                                  parameter=parameter, priority=priority, cooldown_ticks=cooldown))

    action_ids = {a.id for a in actions}

    dependencies = []
    for i, item in enumerate(doc.get("dependencies", [])):
        where = f"dependencies[{i}]"
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise DescriptorError(f"{where}: must be a [from, to] pair")
        src, dst = item
        for endpoint in (src, dst):
            if not isinstance(endpoint, str) or endpoint not in component_ids:
                raise DescriptorError(f"{where}: dangling reference to component '{endpoint}'")
        dependencies.append((src, dst))

    metric_names = {m.name for m in metrics}

    remediation = []
    for i, item in enumerate(doc.get("remediation", [])):
        where = f"remediation[{i}]"
        if not isinstance(item, dict):
            raise DescriptorError(f"{where}: must be an object")
        slo = _require(item, "slo", str, where)
        if slo not in seen_slos:
            raise DescriptorError(f"{where}: dangling reference to slo '{slo}'")
        cause_component = item.get("cause_component", WILDCARD)
        cause_metric = item.get("cause_metric", WILDCARD)
        if cause_component != WILDCARD and cause_component not in component_ids:
            raise DescriptorError(f"{where}: dangling reference to cause_component '{cause_component}'")
        if cause_metric != WILDCARD and cause_metric not in metric_names:
            raise DescriptorError(f"{where}: dangling reference to cause_metric '{cause_metric}'")
        rule_actions = _require(item, "actions", list, where)
        if not rule_actions:
            raise DescriptorError(f"{where}: must reference at least one action")
        for aid in rule_actions:
            if aid not in action_ids:
                raise DescriptorError(f"{where}: dangling reference to action '{aid}'")
        remediation.append(RemediationRule(slo=slo, cause_component=cause_component,
                                           cause_metric=cause_metric, actions=tuple(rule_actions)))

    return Descriptor(
        components=tuple(components),
        metrics=tuple(metrics),
        slos=tuple(slos),
        actions=tuple(actions),
        dependencies=tuple(dependencies),
        remediation=tuple(remediation),
    )


def parse_descriptor(text: str) -> Descriptor:
    """Parse a UTF-8 JSON descriptor document.

    Every input either yields a fully validated Descriptor or raises a
    DescriptorError; a partially populated model is never returned.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DescriptorError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return descriptor_from_dict(doc)


def load_descriptor(path) -> Descriptor:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_descriptor(fh.read())


def descriptor_to_dict(d: Descriptor) -> dict:
    return {
        "components": [{"id": c.id, "kind": c.kind} for c in d.components],
        "metrics": [{"name": m.name, "component": m.component, "level": m.level, "unit": m.unit}
                    for m in d.metrics],
        "slos": [{"id": s.id, "metric": s.metric, "component": s.component, "op": s.op,
                  "threshold": s.threshold, "debounce_ticks": s.debounce_ticks} for s in d.slos],
        "actions": [{"id": a.id, "level": a.level, "verb": a.verb, "target": a.target,
                     "parameter": a.parameter, "priority": a.priority,
                     "cooldown_ticks": a.cooldown_ticks} for a in d.actions],
        "dependencies": [[src, dst] for src, dst in d.dependencies],
        "remediation": [{"slo": r.slo, "cause_component": r.cause_component,
                         "cause_metric": r.cause_metric, "actions": list(r.actions)}
                        for r in d.remediation],
    }


def render_descriptor(d: Descriptor) -> str:
    """Serialize a Descriptor back to JSON; parse(render(d)) == d."""
    return json.dumps(descriptor_to_dict(d), indent=2)


def validate_remediation(d: Descriptor) -> list[str]:
    """Warn about SLOs that have no remediation entry (report-only violations)."""
    mapped = {r.slo for r in d.remediation if r.actions}
    warnings = []
    for slo in d.slos:
        if slo.id not in mapped:
            warnings.append(f"slo '{slo.id}' has no remediation entry; violations will be report-only")
    return warnings
