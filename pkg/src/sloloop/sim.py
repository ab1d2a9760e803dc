"""Deterministic simulator of the camera -> motion-detector -> recognizer pipeline.

Time advances in integer ticks (one simulated second) but frames live in
continuous time inside a tick: cameras start Poisson appearance events, each
event emits frames at the camera's frame rate for its duration, a per-camera
motion detector forwards them (optionally with its own service time), and a
shared replica pool serves the recognizer queue FIFO. Fault windows add
transport latency or multiply service times. Identical (seed, scenario)
always produces bit-identical telemetry.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from collections import deque
from dataclasses import dataclass

from .actuation import Actuator, Ack, applied, rejected

MODEL_HEAVY = "heavy"
MODEL_LIGHT = "light"
MODELS = (MODEL_HEAVY, MODEL_LIGHT)

FAULT_LATENCY = "network_latency"
FAULT_CPU = "cpu_pressure"
FAULT_KINDS = (FAULT_LATENCY, FAULT_CPU)

DEFAULT_EVENT_DURATION = 10.0
DEFAULT_FRAME_RATE = 5.0
DEFAULT_SERVICE_TIMES = {MODEL_HEAVY: 0.35, MODEL_LIGHT: 0.12}
DEFAULT_ACCURACIES = {MODEL_HEAVY: 0.92, MODEL_LIGHT: 0.80}
ACCURACY_NOISE = 0.01


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class NodeProfile:
    cpu_cores: int
    ram_gb: int
    link_gbps: float

    def __post_init__(self):
        if self.cpu_cores <= 0 or self.ram_gb <= 0 or self.link_gbps <= 0:
            raise SimError("node profile values must be positive")


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    target: str
    magnitude: float
    window: tuple[int, int]

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise SimError(f"unknown fault kind '{self.kind}'")
        if self.magnitude <= 0:
            raise SimError("fault magnitude must be positive")
        t0, t1 = self.window
        if t0 >= t1:
            raise SimError(f"fault window must satisfy t0 < t1, got {self.window}")

    def active(self, when: float) -> bool:
        return self.window[0] <= when < self.window[1]


@dataclass
class _Event:
    start: float
    end: float
    next_frame: float


@dataclass
class _Frame:
    camera: str
    created: float
    forwarded: float = 0.0
    arrival: float = 0.0
    seq: int = 0


@dataclass(frozen=True)
class FrameRecord:
    camera: str
    created: float
    forwarded: float
    arrival: float
    start: float
    completion: float

    @property
    def response(self) -> float:
        return self.completion - self.created

    @property
    def processing(self) -> float:
        return self.completion - self.arrival


class CameraSim:
    """One camera plus its paired motion detector.

    Appearance events are drawn from a Poisson process via inverse-CDF
    sampling on a dedicated uniform stream, so raising the appearance rate
    never removes events for a fixed seed. Offsets come from a second stream
    to keep event counts independent of within-tick timing.
    """

    def __init__(self, camera_id: str, detector_id: str, appearance_rate: float,
                 frame_rate: float, event_duration: float, seed):
        if appearance_rate < 0:
            raise SimError(f"camera '{camera_id}': appearance rate must be >= 0")
        if frame_rate <= 0:
            raise SimError(f"camera '{camera_id}': frame rate must be > 0")
        if event_duration <= 0:
            raise SimError(f"camera '{camera_id}': event duration must be > 0")
        self.id = camera_id
        self.detector_id = detector_id
        self.appearance_rate = appearance_rate
        self.frame_rate = frame_rate
        self.event_duration = event_duration
        self._count_rng = random.Random(f"{seed}:{camera_id}:events")
        self._offset_rng = random.Random(f"{seed}:{camera_id}:offsets")
        self.events: list[_Event] = []
        self.detector_free = 0.0

    def generate_frames(self, tick: int) -> list[float]:
        """Frame capture times in [tick, tick+1), chronologically ordered."""
        lam = self.appearance_rate / 3600.0
        count = _poisson_icdf(self._count_rng.random(), lam)
        for _ in range(count):
            offset = self._offset_rng.random()
            start = tick + offset
            self.events.append(_Event(start=start, end=start + self.event_duration,
                                      next_frame=start))
        frames: list[float] = []
        limit = tick + 1.0
        for event in self.events:
            step = 1.0 / self.frame_rate
            # the epsilon keeps accumulated float error from minting an extra
            # frame exactly at the event end
            while event.next_frame < limit and event.next_frame < event.end - 1e-9:
                frames.append(event.next_frame)
                event.next_frame += step
        self.events = [e for e in self.events if e.next_frame < e.end - 1e-9]
        frames.sort()
        return frames


def _poisson_icdf(u: float, lam: float) -> int:
    """Smallest k with Poisson CDF(k) >= u; monotone in lam for fixed u."""
    if lam <= 0.0:
        return 0
    p = math.exp(-lam)
    cdf = p
    k = 0
    while u > cdf and k < 1000:
        k += 1
        p *= lam / k
        cdf += p
    return k


class RecognizerSim:
    """Shared FIFO queue served by homogeneous replicas (M/D/c shape)."""

    def __init__(self, recognizer_id: str, replicas: int, model: str,
                 service_times: dict[str, float], accuracies: dict[str, float],
                 queue_cap: int | None, max_replicas: int | None):
        if replicas < 1:
            raise SimError("recognizer replicas must be >= 1")
        if model not in MODELS:
            raise SimError(f"unknown recognizer model '{model}'")
        self.id = recognizer_id
        self.model = model
        self.service_times = dict(service_times)
        self.accuracies = dict(accuracies)
        self.queue_cap = queue_cap
        self.max_replicas = max_replicas
        self.waiting: deque[_Frame] = deque()
        self.replica_free: list[float] = [0.0] * replicas

    @property
    def replicas(self) -> int:
        return len(self.replica_free)

    def base_service_time(self) -> float:
        return self.service_times[self.model]

    def scale_to(self, replicas: int, now: float) -> None:
        current = len(self.replica_free)
        if replicas > current:
            self.replica_free.extend([now] * (replicas - current))
        elif replicas < current:
            # drop the most backed-up servers; their in-flight frames drain
            self.replica_free.sort()
            del self.replica_free[replicas:]


class SimWorld:
    """Discrete-event world state; step() advances one tick and emits telemetry."""

    def __init__(self, cameras: list[CameraSim], recognizer: RecognizerSim,
                 *, seed=0, horizon: int = 0,
                 nodes: dict[str, NodeProfile] | None = None,
                 detector_service: float = 0.0,
                 event_duration: float = DEFAULT_EVENT_DURATION,
                 mutations: list[dict] | None = None):
        if not cameras:
            raise SimError("scenario must declare at least one camera")
        self.cameras = list(cameras)
        self.recognizer = recognizer
        self.seed = seed
        self.horizon = horizon
        self.nodes = dict(nodes or {})
        self.detector_service = detector_service
        self.event_duration = event_duration
        self.mutations = sorted(mutations or [], key=lambda m: m["tick"])
        self.clock = 0
        self._acc_rng = random.Random(f"{seed}:accuracy")
        self._seq = 0
        self._forwards: list[tuple[float, int, _Frame]] = []
        self._arrivals: list[tuple[float, int, _Frame]] = []
        self._in_service: list[tuple[float, int, _Frame, float]] = []
        self._busy: dict[int, float] = {}
        self.faults: list[FaultSpec] = []
        self.completed: list[FrameRecord] = []
        self.frames_forwarded = 0
        self.frames_served = 0
        self.frames_dropped = 0
        self._sink = None

    # -- wiring ---------------------------------------------------------------

    def bind_sink(self, sink) -> None:
        """sink(component, metric, tick, value) is called for every emission."""
        self._sink = sink

    def component_ids(self) -> list[str]:
        out = []
        for cam in self.cameras:
            out.append(cam.id)
            out.append(cam.detector_id)
        out.append(self.recognizer.id)
        return out

    def find_camera(self, component: str) -> CameraSim | None:
        for cam in self.cameras:
            if component in (cam.id, cam.detector_id):
                return cam
        return None

    # -- faults ----------------------------------------------------------------

    def inject_fault(self, fault: FaultSpec) -> None:
        if fault.kind == FAULT_CPU:
            if fault.target != self.recognizer.id:
                raise SimError(f"cpu_pressure target must be the recognizer, "
                               f"got '{fault.target}'")
        elif fault.target not in self.component_ids():
            raise SimError(f"unknown fault target '{fault.target}'")
        for existing in self.faults:
            if (existing.kind == fault.kind and existing.target == fault.target
                    and existing.window[0] < fault.window[1]
                    and fault.window[0] < existing.window[1]):
                raise SimError(
                    f"overlapping {fault.kind} fault on '{fault.target}' rejected")
        self.faults.append(fault)

    def _transport_latency(self, camera: CameraSim, when: float) -> float:
        total = 0.0
        for fault in self.faults:
            if fault.kind != FAULT_LATENCY or not fault.active(when):
                continue
            if fault.target in (camera.id, camera.detector_id, self.recognizer.id):
                total += fault.magnitude
        return total

    def _pressure_multiplier(self, when: float) -> float:
        mult = 1.0
        for fault in self.faults:
            if fault.kind == FAULT_CPU and fault.active(when):
                mult *= fault.magnitude
        return mult

    # -- reconfiguration (simulator actuator backend) --------------------------

    def reconfigure(self, verb: str, target: str, parameter: float) -> Ack:
        if verb == "scale_replicas":
            if target != self.recognizer.id:
                return rejected(f"unknown scale target '{target}'")
            replicas = int(parameter)
            cap = self.recognizer.max_replicas
            if cap is not None and replicas > cap:
                return rejected(f"replica count {replicas} exceeds node capacity {cap}")
            self.recognizer.scale_to(replicas, float(self.clock))
            return applied()
        if verb == "set_frame_rate":
            camera = self.find_camera(target)
            if camera is None:
                return rejected(f"unknown frame-rate target '{target}'")
            camera.frame_rate = float(parameter)
            return applied()
        if verb == "switch_model":
            if target != self.recognizer.id:
                return rejected(f"unknown model target '{target}'")
            self.recognizer.model = MODEL_LIGHT if parameter == 1 else MODEL_HEAVY
            return applied()
        if verb == "set_queue_cap":
            if target != self.recognizer.id:
                return rejected(f"unknown queue target '{target}'")
            self.recognizer.queue_cap = int(parameter)
            return applied()
        return rejected(f"unsupported verb '{verb}'")

    def sim_actuator(self) -> "SimActuator":
        return SimActuator(self)

    # -- stepping ---------------------------------------------------------------

    def _apply_mutations(self, tick: int) -> None:
        while self.mutations and self.mutations[0]["tick"] <= tick:
            mutation = self.mutations.pop(0)
            for spec in mutation.get("add_cameras", []):
                camera = _camera_from_dict(spec, self.seed, self.event_duration)
                if self.find_camera(camera.id) is not None:
                    raise SimError(f"mutation adds duplicate camera id '{camera.id}'")
                self.cameras.append(camera)

    def step(self) -> list[tuple[str, str, int, float]]:
        tick = self.clock
        end = tick + 1.0
        self._apply_mutations(tick)

        # 1. cameras capture frames; detectors process and forward them
        for camera in self.cameras:
            for created in camera.generate_frames(tick):
                start = max(created, camera.detector_free)
                forwarded = start + self.detector_service
                camera.detector_free = forwarded
                self._seq += 1
                frame = _Frame(camera=camera.id, created=created,
                               forwarded=forwarded, seq=self._seq)
                heapq.heappush(self._forwards, (forwarded, frame.seq, frame))

        # 2. forwards due this tick enter transport toward the recognizer
        forwards_by_detector: dict[str, int] = {}
        while self._forwards and self._forwards[0][0] < end:
            _, _, frame = heapq.heappop(self._forwards)
            camera = self.find_camera(frame.camera)
            frame.arrival = frame.forwarded + self._transport_latency(camera, frame.forwarded)
            self.frames_forwarded += 1
            forwards_by_detector[camera.detector_id] = \
                forwards_by_detector.get(camera.detector_id, 0) + 1
            heapq.heappush(self._arrivals, (frame.arrival, frame.seq, frame))

        # 3. recognizer: merge arrivals and service starts chronologically
        completions = self._process_recognizer(tick, end)

        # 4. emit telemetry
        return self._emit(tick, forwards_by_detector, completions)

    def _process_recognizer(self, tick: int, end: float) -> list[FrameRecord]:
        rec = self.recognizer
        while True:
            next_arrival = None
            if self._arrivals and self._arrivals[0][0] < end:
                next_arrival = self._arrivals[0][0]
            next_start = None
            idx = None
            if rec.waiting and rec.replica_free:
                idx = min(range(len(rec.replica_free)), key=rec.replica_free.__getitem__)
                candidate = max(rec.replica_free[idx], rec.waiting[0].arrival)
                if candidate < end:
                    next_start = candidate
            if next_arrival is None and next_start is None:
                break
            if next_start is not None and (next_arrival is None or next_start <= next_arrival):
                frame = rec.waiting.popleft()
                service = rec.base_service_time() * self._pressure_multiplier(next_start)
                completion = next_start + service
                rec.replica_free[idx] = completion
                self._add_busy(next_start, completion)
                heapq.heappush(self._in_service,
                               (completion, frame.seq, frame, next_start))
            else:
                _, _, frame = heapq.heappop(self._arrivals)
                if rec.queue_cap is not None and len(rec.waiting) >= rec.queue_cap:
                    self.frames_dropped += 1
                else:
                    rec.waiting.append(frame)

        completions = []
        while self._in_service and self._in_service[0][0] < end:
            completion, _, frame, start = heapq.heappop(self._in_service)
            self.frames_served += 1
            record = FrameRecord(camera=frame.camera, created=frame.created,
                                 forwarded=frame.forwarded, arrival=frame.arrival,
                                 start=start, completion=completion)
            self.completed.append(record)
            completions.append(record)
        return completions

    def _add_busy(self, start: float, completion: float) -> None:
        k = int(start)
        while k < completion:
            overlap = min(completion, k + 1.0) - max(start, float(k))
            if overlap > 0:
                self._busy[k] = self._busy.get(k, 0.0) + overlap
            k += 1

    def _emit(self, tick, forwards_by_detector, completions):
        rec = self.recognizer
        batch: list[tuple[str, str, int, float]] = []

        def emit(component, metric, value):
            batch.append((component, metric, tick, value))

        by_camera: dict[str, list[FrameRecord]] = {}
        for record in completions:
            by_camera.setdefault(record.camera, []).append(record)

        for camera in self.cameras:
            emit(camera.id, "frame_rate", camera.frame_rate)
            emit(camera.detector_id, "detected_motions",
                 float(forwards_by_detector.get(camera.detector_id, 0)))
            mine = by_camera.get(camera.id)
            if mine:
                emit(camera.id, "response_time",
                     sum(r.response for r in mine) / len(mine))

        service_now = rec.base_service_time() * self._pressure_multiplier(float(tick))
        if completions:
            emit(rec.id, "frame_processing_time",
                 sum(r.processing for r in completions) / len(completions))
            emit(rec.id, "response_time",
                 sum(r.response for r in completions) / len(completions))
        else:
            # no-load path estimate keeps the SLI continuous between events
            emit(rec.id, "frame_processing_time", service_now)
            emit(rec.id, "response_time", self.detector_service + service_now)
        emit(rec.id, "queue_length", float(len(rec.waiting)))
        busy = self._busy.pop(tick, 0.0)
        emit(rec.id, "cpu_utilization", min(1.0, busy / rec.replicas))
        noise = self._acc_rng.uniform(-ACCURACY_NOISE, ACCURACY_NOISE)
        emit(rec.id, "detection_accuracy",
             min(1.0, max(0.0, rec.accuracies[rec.model] + noise)))
        emit(rec.id, "replicas", float(rec.replicas))

        self.clock = tick + 1
        if self._sink is not None:
            for component, metric, when, value in batch:
                self._sink(component, metric, when, value)
        return batch

    # -- bookkeeping --------------------------------------------------------------

    def in_flight(self) -> int:
        in_service = len(self._in_service)
        in_transit = len(self._arrivals)
        return in_transit + len(self.recognizer.waiting) + in_service

    def conservation(self) -> dict[str, int]:
        return {
            "forwarded": self.frames_forwarded,
            "served": self.frames_served,
            "dropped": self.frames_dropped,
            "in_flight": self.in_flight(),
        }


class SimActuator(Actuator):
    """Applies control-loop actions directly to the world; effects are visible
    at the next tick."""

    capabilities = frozenset({"scale_replicas", "set_frame_rate",
                              "switch_model", "set_queue_cap"})

    def __init__(self, world: SimWorld):
        self.world = world

    def _do_apply(self, action) -> Ack:
        return self.world.reconfigure(action.verb, action.target, action.parameter)


# -- scenario loading -------------------------------------------------------------


def _camera_from_dict(spec: dict, seed, default_duration: float) -> CameraSim:
    if not isinstance(spec, dict) or "id" not in spec:
        raise SimError(f"camera entry must be an object with an 'id': {spec!r}")
    camera_id = spec["id"]
    if "ar_per_hour" not in spec:
        raise SimError(f"camera '{camera_id}': missing 'ar_per_hour'")
    return CameraSim(
        camera_id=camera_id,
        detector_id=spec.get("detector", f"{camera_id}-detector"),
        appearance_rate=float(spec["ar_per_hour"]),
        frame_rate=float(spec.get("frame_rate", DEFAULT_FRAME_RATE)),
        event_duration=float(spec.get("event_duration_s", default_duration)),
        seed=seed,
    )


def scenario_from_dict(doc: dict) -> SimWorld:
    if not isinstance(doc, dict):
        raise SimError(f"scenario root must be an object, got {type(doc).__name__}")
    if "horizon_ticks" not in doc or not isinstance(doc["horizon_ticks"], int) \
            or doc["horizon_ticks"] <= 0:
        raise SimError("scenario requires a positive integer 'horizon_ticks'")
    seed = doc.get("seed", 0)
    duration = float(doc.get("event_duration_s", DEFAULT_EVENT_DURATION))
    cameras_doc = doc.get("cameras")
    if not isinstance(cameras_doc, list) or not cameras_doc:
        raise SimError("scenario requires a non-empty 'cameras' list")
    cameras = [_camera_from_dict(spec, seed, duration) for spec in cameras_doc]
    ids = [c.id for c in cameras]
    if len(set(ids)) != len(ids):
        raise SimError("duplicate camera ids in scenario")

    nodes = {}
    for spec in doc.get("nodes", []):
        if not isinstance(spec, dict) or "id" not in spec:
            raise SimError(f"node entry must be an object with an 'id': {spec!r}")
        nodes[spec["id"]] = NodeProfile(cpu_cores=int(spec.get("cpu_cores", 1)),
                                        ram_gb=int(spec.get("ram_gb", 1)),
                                        link_gbps=float(spec.get("link_gbps", 1.0)))

    rec_doc = doc.get("recognizer", {})
    service_times = dict(DEFAULT_SERVICE_TIMES)
    service_times.update(rec_doc.get("service_times", {}))
    accuracies = dict(DEFAULT_ACCURACIES)
    accuracies.update(rec_doc.get("accuracies", {}))
    node_id = rec_doc.get("node")
    max_replicas = None
    if node_id is not None:
        if node_id not in nodes:
            raise SimError(f"recognizer node '{node_id}' is not declared")
        max_replicas = nodes[node_id].cpu_cores
    recognizer = RecognizerSim(
        recognizer_id=rec_doc.get("id", "recognizer"),
        replicas=int(rec_doc.get("replicas", 1)),
        model=rec_doc.get("model", MODEL_HEAVY),
        service_times=service_times,
        accuracies=accuracies,
        queue_cap=rec_doc.get("queue_cap"),
        max_replicas=max_replicas,
    )

    mutations = []
    for spec in doc.get("mutations", []):
        if not isinstance(spec, dict) or not isinstance(spec.get("tick"), int):
            raise SimError(f"mutation entry must be an object with an integer 'tick': {spec!r}")
        mutations.append(spec)

    world = SimWorld(cameras=cameras, recognizer=recognizer, seed=seed,
                     horizon=doc["horizon_ticks"], nodes=nodes,
                     detector_service=float(doc.get("detector_service_s", 0.0)),
                     event_duration=duration,
                     mutations=mutations)

    for spec in doc.get("faults", []):
        if not isinstance(spec, dict):
            raise SimError(f"fault entry must be an object: {spec!r}")
        try:
            window = tuple(spec["window"])
            fault = FaultSpec(kind=spec["kind"], target=spec["target"],
                              magnitude=float(spec["magnitude"]),
                              window=(int(window[0]), int(window[1])))
        except (KeyError, TypeError, IndexError) as exc:
            raise SimError(f"malformed fault entry {spec!r}") from exc
        world.inject_fault(fault)
    return world


def load_scenario(text: str) -> SimWorld:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SimError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(doc)


def load_scenario_file(path) -> SimWorld:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(fh.read())
