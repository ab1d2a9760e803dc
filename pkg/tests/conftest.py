import json

import pytest

from sloloop.descriptor import parse_descriptor


def pytest_runtest_logreport(report):
    """One PASS/FAIL line per acceptance criterion."""
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    outcome = "PASS" if report.passed else "FAIL"
    print(f"\n[acceptance] {outcome} {name} ({report.duration:.2f}s)")


def video_descriptor_doc(threshold=0.7, debounce=2, cooldown=10):
    """Descriptor for the camera -> motion-detector -> recognizer use case."""
    cameras = ["cam1", "cam2", "cam3"]
    components = [{"id": c, "kind": "service"} for c in cameras]
    components += [{"id": f"{c}-detector", "kind": "service"} for c in cameras]
    components.append({"id": "recognizer", "kind": "service"})
    metrics = [{"name": "response_time", "component": "recognizer",
                "level": "application", "unit": "s"},
               {"name": "frame_processing_time", "component": "recognizer",
                "level": "application", "unit": "s"},
               {"name": "detection_accuracy", "component": "recognizer",
                "level": "application", "unit": "ratio"},
               {"name": "queue_length", "component": "recognizer",
                "level": "application", "unit": "frames"},
               {"name": "cpu_utilization", "component": "recognizer",
                "level": "infrastructure", "unit": "ratio"}]
    for c in cameras:
        metrics.append({"name": "detected_motions", "component": f"{c}-detector",
                        "level": "application", "unit": "count"})
    actions = [{"id": f"throttle_{c}", "level": "application", "verb": "set_frame_rate",
                "target": c, "parameter": 2.0, "priority": 1, "cooldown_ticks": cooldown}
               for c in cameras]
    actions.append({"id": "scale_recognizer", "level": "infrastructure",
                    "verb": "scale_replicas", "target": "recognizer",
                    "parameter": 2, "priority": 2, "cooldown_ticks": cooldown})
    actions.append({"id": "light_model", "level": "application", "verb": "switch_model",
                    "target": "recognizer", "parameter": 1, "priority": 3,
                    "cooldown_ticks": cooldown})
    dependencies = []
    for c in cameras:
        dependencies.append([c, f"{c}-detector"])
        dependencies.append([f"{c}-detector", "recognizer"])
    return {
        "components": components,
        "metrics": metrics,
        "slos": [{"id": "rt_slo", "metric": "response_time", "component": "recognizer",
                  "op": "<=", "threshold": threshold, "debounce_ticks": debounce}],
        "actions": actions,
        "dependencies": dependencies,
        "remediation": [{"slo": "rt_slo", "cause_component": "*", "cause_metric": "*",
                         "actions": [f"throttle_{c}" for c in cameras]
                         + ["scale_recognizer", "light_model"]}],
    }


@pytest.fixture
def video_descriptor():
    return parse_descriptor(json.dumps(video_descriptor_doc()))


def minimal_descriptor_doc():
    return {
        "components": [{"id": "svc", "kind": "service"}],
        "metrics": [{"name": "response_time", "component": "svc",
                     "level": "application", "unit": "s"}],
        "slos": [{"id": "rt", "metric": "response_time", "component": "svc",
                  "op": "<=", "threshold": 2.0}],
        "actions": [],
        "dependencies": [],
        "remediation": [],
    }


def basic_scenario_doc(ars=(5, 5, 5), horizon=600, seed=11, **overrides):
    doc = {
        "seed": seed,
        "horizon_ticks": horizon,
        "cameras": [{"id": f"cam{i+1}", "ar_per_hour": ar, "frame_rate": 5.0}
                    for i, ar in enumerate(ars)],
        "recognizer": {"id": "recognizer", "replicas": 1, "model": "heavy"},
    }
    doc.update(overrides)
    return doc
