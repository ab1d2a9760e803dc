import json

import pytest

from sloloop.descriptor import (DescriptorError, parse_descriptor, render_descriptor,
                                validate_remediation)

from conftest import minimal_descriptor_doc, video_descriptor_doc


def test_minimal_document():
    d = parse_descriptor(json.dumps(minimal_descriptor_doc()))
    assert len(d.slos) == 1
    assert d.slos[0].op == "<="
    assert d.slos[0].threshold == 2.0
    assert d.slos[0].debounce_ticks == 3  # default


def test_video_use_case_descriptor(video_descriptor):
    d = video_descriptor
    camera_like = {c.id for c in d.components}
    assert {"cam1", "cam2", "cam3", "recognizer"} <= camera_like
    app_metrics = {m.name for m in d.metrics if m.level == "application"}
    assert "frame_processing_time" in app_metrics
    assert "detection_accuracy" in app_metrics


def test_invalid_op_token_rejected():
    doc = minimal_descriptor_doc()
    doc["slos"][0]["op"] = "~="
    with pytest.raises(DescriptorError, match="invalid op token"):
        parse_descriptor(json.dumps(doc))


def test_invalid_verb_token_rejected():
    doc = minimal_descriptor_doc()
    doc["actions"] = [{"id": "a", "level": "application", "verb": "reboot",
                       "target": "svc", "parameter": 1}]
    with pytest.raises(DescriptorError, match="invalid verb token"):
        parse_descriptor(json.dumps(doc))


def test_syntax_error_reports_position():
    with pytest.raises(DescriptorError, match=r"line \d+, column \d+"):
        parse_descriptor('{"components": [}')


def test_dangling_metric_reference_names_id():
    doc = minimal_descriptor_doc()
    doc["slos"][0]["metric"] = "latency"
    with pytest.raises(DescriptorError, match="latency"):
        parse_descriptor(json.dumps(doc))


def test_dangling_component_reference():
    doc = minimal_descriptor_doc()
    doc["metrics"][0]["component"] = "ghost"
    with pytest.raises(DescriptorError, match="ghost"):
        parse_descriptor(json.dumps(doc))


def test_duplicate_component_id():
    doc = minimal_descriptor_doc()
    doc["components"].append({"id": "svc", "kind": "pod"})
    with pytest.raises(DescriptorError, match="duplicate"):
        parse_descriptor(json.dumps(doc))


def test_duplicate_metric_key():
    doc = minimal_descriptor_doc()
    doc["metrics"].append(dict(doc["metrics"][0]))
    with pytest.raises(DescriptorError, match="duplicate"):
        parse_descriptor(json.dumps(doc))


def test_level_verb_mismatch_rejected():
    doc = minimal_descriptor_doc()
    doc["actions"] = [{"id": "a", "level": "infrastructure", "verb": "set_frame_rate",
                       "target": "svc", "parameter": 1}]
    with pytest.raises(DescriptorError, match="not a infrastructure-level verb"):
        parse_descriptor(json.dumps(doc))


def test_non_finite_threshold_rejected():
    doc = minimal_descriptor_doc()
    doc["slos"][0]["threshold"] = float("inf")
    with pytest.raises(DescriptorError, match="finite"):
        parse_descriptor(json.dumps({**doc, "slos": [{**doc["slos"][0], "threshold": 1e999}]}))


def test_remediation_must_reference_actions():
    doc = video_descriptor_doc()
    doc["remediation"][0]["actions"] = []
    with pytest.raises(DescriptorError, match="at least one action"):
        parse_descriptor(json.dumps(doc))


def test_remediation_dangling_action():
    doc = video_descriptor_doc()
    doc["remediation"][0]["actions"] = ["nope"]
    with pytest.raises(DescriptorError, match="nope"):
        parse_descriptor(json.dumps(doc))


def test_dependency_cycles_permitted():
    doc = minimal_descriptor_doc()
    doc["components"].append({"id": "other", "kind": "service"})
    doc["dependencies"] = [["svc", "other"], ["other", "svc"]]
    d = parse_descriptor(json.dumps(doc))
    assert len(d.dependencies) == 2


def test_round_trip(video_descriptor):
    assert parse_descriptor(render_descriptor(video_descriptor)) == video_descriptor


def test_round_trip_minimal():
    d = parse_descriptor(json.dumps(minimal_descriptor_doc()))
    assert parse_descriptor(render_descriptor(d)) == d


def test_parse_is_total_on_bad_roots():
    for bad in ("[]", "42", '"x"', "null"):
        with pytest.raises(DescriptorError):
            parse_descriptor(bad)


def test_validate_remediation_all_mapped(video_descriptor):
    assert validate_remediation(video_descriptor) == []


def test_validate_remediation_reports_unmapped():
    doc = video_descriptor_doc()
    doc["slos"].append({"id": "acc_slo", "metric": "detection_accuracy",
                        "component": "recognizer", "op": ">=", "threshold": 0.8})
    d = parse_descriptor(json.dumps(doc))
    warnings = validate_remediation(d)
    assert len(warnings) == 1
    assert "acc_slo" in warnings[0]


def test_validate_remediation_empty_catalog():
    doc = video_descriptor_doc()
    doc["actions"] = []
    doc["remediation"] = []
    doc["slos"].append({"id": "acc_slo", "metric": "detection_accuracy",
                        "component": "recognizer", "op": ">=", "threshold": 0.8})
    d = parse_descriptor(json.dumps(doc))
    # every SLO is unmapped, so one warning each
    assert len(validate_remediation(d)) == len(d.slos)
