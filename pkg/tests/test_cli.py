import json

import pytest

from sloloop.cli import main

from conftest import basic_scenario_doc, video_descriptor_doc


@pytest.fixture
def workdir(tmp_path):
    descriptor = tmp_path / "descriptor.json"
    descriptor.write_text(json.dumps(video_descriptor_doc()))
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps(basic_scenario_doc(ars=(5, 5, 5), horizon=400)))
    return tmp_path


def test_open_loop_run_writes_artifacts(workdir):
    out = workdir / "out"
    code = main(["run", "--scenario", str(workdir / "scenario.json"),
                 "--mode", "open-loop", "--out", str(out)])
    assert code == 0
    telemetry = (out / "telemetry.csv").read_text()
    assert telemetry.startswith("component,metric,timestamp,value")
    assert "recognizer,response_time" in telemetry
    summary = (out / "summary.txt").read_text()
    assert "mode: open-loop" in summary
    assert "recognizer/response_time" in summary


def test_bad_scenario_path_exits_one_without_artifacts(workdir, capsys):
    out = workdir / "nope_out"
    code = main(["run", "--scenario", str(workdir / "missing.json"),
                 "--mode", "open-loop", "--out", str(out)])
    assert code == 1
    assert not out.exists()


def test_bad_descriptor_surfaces_parse_error(workdir, capsys):
    bad = workdir / "bad.json"
    bad.write_text('{"components": [{"id": "x", "kind": "alien"}]}')
    code = main(["run", "--scenario", str(workdir / "scenario.json"),
                 "--descriptor", str(bad), "--mode", "closed-loop",
                 "--out", str(workdir / "out")])
    assert code == 1
    assert "invalid kind token" in capsys.readouterr().err


def test_closed_loop_requires_descriptor(workdir, capsys):
    code = main(["run", "--scenario", str(workdir / "scenario.json"),
                 "--mode", "closed-loop", "--out", str(workdir / "out")])
    assert code == 1
    assert "requires --descriptor" in capsys.readouterr().err


def test_closed_loop_healthy_run(workdir):
    out = workdir / "closed"
    code = main(["run", "--scenario", str(workdir / "scenario.json"),
                 "--descriptor", str(workdir / "descriptor.json"),
                 "--mode", "closed-loop", "--out", str(out)])
    assert code == 0
    trace_lines = (out / "loop_trace.jsonl").read_text().strip().splitlines()
    events = [json.loads(line) for line in trace_lines]
    assert any(e["phase"] == "status" for e in events)
    assert (out / "knowledge.jsonl").exists()


def test_summary_violations_equal_trace_fail_count(workdir):
    # impossible report-only SLO: always violated, never remediated
    doc = video_descriptor_doc()
    doc["slos"].append({"id": "impossible", "metric": "detection_accuracy",
                        "component": "recognizer", "op": ">=", "threshold": 2.0,
                        "debounce_ticks": 1})
    descriptor = workdir / "impossible.json"
    descriptor.write_text(json.dumps(doc))
    out = workdir / "violating"
    code = main(["run", "--scenario", str(workdir / "scenario.json"),
                 "--descriptor", str(descriptor),
                 "--mode", "closed-loop", "--out", str(out)])
    assert code == 2  # unresolved violation at horizon end
    events = [json.loads(line) for line
              in (out / "loop_trace.jsonl").read_text().strip().splitlines()]
    fails = sum(1 for e in events
                if e["phase"] == "status" and e["payload"]["verdict"] == "fail")
    summary = (out / "summary.txt").read_text()
    assert f"violations: {fails}" in summary
    assert fails > 0


def test_identical_config_gives_byte_identical_artifacts(workdir):
    outputs = []
    for name in ("a", "b"):
        out = workdir / name
        assert main(["run", "--scenario", str(workdir / "scenario.json"),
                     "--descriptor", str(workdir / "descriptor.json"),
                     "--mode", "closed-loop", "--out", str(out)]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outputs[0] == outputs[1]


def test_seed_override_changes_telemetry(workdir):
    outs = []
    for seed in ("1", "2"):
        out = workdir / f"seed{seed}"
        main(["run", "--scenario", str(workdir / "scenario.json"),
              "--mode", "open-loop", "--out", str(out), "--seed", seed])
        outs.append((out / "telemetry.csv").read_bytes())
    assert outs[0] != outs[1]


def test_plotdata_motions_vs_response(workdir, capsys):
    out = workdir / "plot_run"
    main(["run", "--scenario", str(workdir / "scenario.json"),
          "--mode", "open-loop", "--out", str(out)])
    capsys.readouterr()
    code = main(["plotdata", "--run", str(out), "--figure", "motions_vs_response"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "tick,camera,detected_motions,response_time"
    cameras = {line.split(",")[1] for line in lines[1:]}
    assert cameras == {"cam1", "cam2", "cam3"}


def test_plotdata_adaptation_timeline(workdir, capsys):
    out = workdir / "plot_run2"
    main(["run", "--scenario", str(workdir / "scenario.json"),
          "--descriptor", str(workdir / "descriptor.json"),
          "--mode", "closed-loop", "--out", str(out)])
    capsys.readouterr()
    code = main(["plotdata", "--run", str(out), "--figure", "adaptation_timeline"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "tick,frame_processing_time,replicas,action"
    assert len(lines) > 300
    assert all(line.split(",")[2] == "1" for line in lines[1:])  # no scale events here


def test_plotdata_missing_run_dir(workdir, capsys):
    assert main(["plotdata", "--run", str(workdir / "ghost"),
                 "--figure", "adaptation_timeline"]) == 1
    assert "missing artifacts" in capsys.readouterr().err


def test_plotdata_empty_run_gives_header_only(workdir, capsys):
    empty = workdir / "empty_run"
    empty.mkdir()
    (empty / "telemetry.csv").write_text("component,metric,timestamp,value\n")
    for figure in ("motions_vs_response", "adaptation_timeline"):
        assert main(["plotdata", "--run", str(empty), "--figure", figure]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 1  # header only


def test_validate_ok(workdir, capsys):
    assert main(["validate", "--descriptor", str(workdir / "descriptor.json")]) == 0
    out = capsys.readouterr().out
    assert "ok:" in out


def test_validate_dangling_reference(workdir, capsys):
    doc = video_descriptor_doc()
    doc["slos"][0]["metric"] = "ghost_metric"
    bad = workdir / "dangling.json"
    bad.write_text(json.dumps(doc))
    assert main(["validate", "--descriptor", str(bad)]) == 1
    assert "ghost_metric" in capsys.readouterr().err


def test_validate_warns_on_unmapped_slo(workdir, capsys):
    doc = video_descriptor_doc()
    doc["slos"].append({"id": "extra", "metric": "detection_accuracy",
                        "component": "recognizer", "op": ">=", "threshold": 0.5})
    path = workdir / "warn.json"
    path.write_text(json.dumps(doc))
    assert main(["validate", "--descriptor", str(path)]) == 0
    assert "warning" in capsys.readouterr().out
