"""Actuator boundary: turns planned actions into configuration changes.

Ships a logging actuator that records the exact reconfiguration it would
request from an external orchestrator; the simulator provides its own
actuator. Wiring to a real cluster API is an extension point, not shipped.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass

from .descriptor import ACTION_VERBS

logger = logging.getLogger(__name__)

APPLIED = "applied"
REJECTED = "rejected"
FAILED = "failed"


@dataclass(frozen=True)
class Ack:
    status: str
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status == APPLIED


def applied() -> Ack:
    return Ack(APPLIED)


def rejected(reason: str) -> Ack:
    return Ack(REJECTED, reason)


def failed(reason: str) -> Ack:
    return Ack(FAILED, reason)


def validate_parameter(verb: str, parameter: float) -> str | None:
    """Shared parameter range rules; returns a rejection reason or None."""
    if verb == "scale_replicas":
        if parameter < 1 or parameter != int(parameter):
            return f"replica count must be a positive integer, got {parameter}"
    elif verb == "set_resource_limit":
        if parameter <= 0:
            return f"resource limit must be positive, got {parameter}"
    elif verb == "set_frame_rate":
        if parameter <= 0:
            return f"frame rate must be positive, got {parameter}"
    elif verb == "switch_model":
        if parameter not in (0, 1):
            return f"model selector must be 0 (heavy) or 1 (light), got {parameter}"
    elif verb == "set_queue_cap":
        if parameter < 1 or parameter != int(parameter):
            return f"queue cap must be a positive integer, got {parameter}"
    return None


class Actuator(ABC):
    """Applies planned actions; rejects verbs outside its capabilities."""

    capabilities: frozenset[str] = frozenset()

    def apply(self, action) -> Ack:
        if action.verb not in self.capabilities:
            return rejected(f"unsupported verb '{action.verb}'")
        reason = validate_parameter(action.verb, action.parameter)
        if reason is not None:
            return rejected(reason)
        try:
            return self._do_apply(action)
        except Exception as exc:  # runtime failure, not policy
            return failed(str(exc))

    @abstractmethod
    def _do_apply(self, action) -> Ack:
        ...


class LoggingActuator(Actuator):
    """No-op actuator: logs the reconfiguration it would request and applies nothing."""

    capabilities = frozenset(ACTION_VERBS)

    def __init__(self):
        self.lines: list[str] = []

    def _do_apply(self, action) -> Ack:
        line = (f"{action.issued_tick},{action.action_id},{action.verb},"
                f"{action.target},{action.parameter:g},{APPLIED}")
        self.lines.append(line)
        logger.info("would apply: %s", line)
        return applied()
