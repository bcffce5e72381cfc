import json
import sys
import textwrap

import pytest

from conftest import make_scene
from roadprobe.detector import (DetectorEndpoint, MockSession, MockSpec, SubprocessSession,
                                open_session, parse_response, serialize_detections,
                                serialize_request)
from roadprobe.errors import (ConfigError, DetectorTimeout, ProcessExit, ProtocolError,
                              RequestFailed)
from roadprobe.metrics import Detection, DetectionSet
from roadprobe.modspace import ModificationSpace, validate_point
from roadprobe.render import BoundingBox, generate_image, save_png

SPACE = ModificationSpace.from_names(["car_x", "car_depth"])


def sample_at(mx, md, index=0):
    scene = make_scene(width=160, height=90, sprite_w=16, sprite_h=12,
                       vanish=(80.0, 30.0), y_near=80.0, x_left_near=20.0,
                       x_right_near=140.0, w_near=32.0, t_far=0.9)
    return generate_image(scene, SPACE, validate_point(SPACE, (mx, md)), sample_index=index)


# ---------------------------------------------------------------- mock

def test_mock_clean_detection_matches_gt():
    spec = MockSpec(base_confidence=0.8, depth_decay=0.5)
    session = MockSession(spec, SPACE)
    sample = sample_at(0.5, 0.4)
    ds = session.detect(sample)
    assert len(ds) == 1
    det = ds.detections[0]
    assert det.label == "car"
    assert det.confidence == pytest.approx(0.8 * (1 - 0.5 * 0.4))
    assert det.box == sample.gt_box


def test_mock_blind_box_membership():
    spec = MockSpec(blind_boxes=(((0.4, 0.4), (0.6, 0.6)),))
    session = MockSession(spec, SPACE)
    assert len(session.detect(sample_at(0.5, 0.5))) == 0
    assert len(session.detect(sample_at(0.4, 0.6))) == 0  # boundary inclusive
    assert len(session.detect(sample_at(0.39, 0.5))) == 1


def test_mock_without_depth_dim_uses_zero():
    space = ModificationSpace.from_names(["brightness"])
    scene = make_scene(width=160, height=90, sprite_w=16, sprite_h=12,
                       vanish=(80.0, 30.0), y_near=80.0, x_left_near=20.0,
                       x_right_near=140.0, w_near=32.0, t_far=0.9)
    sample = generate_image(scene, space, validate_point(space, (0.3,)))
    spec = MockSpec(base_confidence=0.9, depth_decay=1.0)
    ds = MockSession(spec, space).detect(sample)
    assert ds.detections[0].confidence == pytest.approx(0.9)


def test_mock_jitter_deterministic_per_index():
    spec = MockSpec(jitter_px=3, seed=11)
    session = MockSession(spec, SPACE)
    a = session.detect(sample_at(0.5, 0.2, index=4))
    b = session.detect(sample_at(0.5, 0.2, index=4))
    c = session.detect(sample_at(0.5, 0.2, index=5))
    assert a == b
    assert a != c
    gt = sample_at(0.5, 0.2, index=4).gt_box
    box = a.detections[0].box
    assert abs(box.x_min - gt.x_min) <= 3 and abs(box.y_max - gt.y_max) <= 3
    assert box != gt


def test_mock_blind_box_dim_mismatch_rejected():
    spec = MockSpec(blind_boxes=(((0.1,), (0.2,)),))
    with pytest.raises(ConfigError):
        MockSession(spec, SPACE)


def test_mock_spec_validation():
    with pytest.raises(ConfigError):
        MockSpec(base_confidence=0.0)
    with pytest.raises(ConfigError):
        MockSpec(blind_boxes=(((0.5, 0.5), (0.4, 0.4)),))
    with pytest.raises(ConfigError):
        MockSpec(jitter_px=-1)


# ---------------------------------------------------------------- wire format

def test_request_serialization_shape():
    raw = serialize_request(7, "/tmp/x.png", 320, 180)
    obj = json.loads(raw)
    assert obj == {"id": 7, "image_path": "/tmp/x.png", "width": 320, "height": 180}
    assert raw.endswith(b"\n")


def test_response_round_trip_identity():
    ds = DetectionSet((
        Detection("car", 0.875, BoundingBox(1.5, 2.0, 30.25, 40.0)),
        Detection("person", 0.125, BoundingBox(0.0, 0.0, 5.0, 5.0)),
    ))
    raw = serialize_detections(3, ds)
    assert parse_response(raw.rstrip(b"\n"), 3) == ds
    assert parse_response(serialize_detections(0, DetectionSet()).rstrip(b"\n"), 0) == DetectionSet()


def test_parse_response_malformed_carries_payload():
    with pytest.raises(ProtocolError) as excinfo:
        parse_response(b"not json at all", 1)
    assert excinfo.value.payload == b"not json at all"


def test_parse_response_id_mismatch():
    raw = serialize_detections(4, DetectionSet()).rstrip(b"\n")
    with pytest.raises(ProtocolError):
        parse_response(raw, 5)


def test_parse_response_error_object():
    with pytest.raises(RequestFailed, match="file missing"):
        parse_response(b'{"id": 2, "error": "file missing"}', 2)


def test_parse_response_requires_detection_list():
    with pytest.raises(ProtocolError):
        parse_response(b'{"id": 2}', 2)
    with pytest.raises(ProtocolError):
        parse_response(b'{"id": 2, "detections": [{"label": "car"}]}', 2)


# ---------------------------------------------------------------- subprocess sessions

CHILD_TEMPLATE = textwrap.dedent("""
    import json, sys, time
    mode = sys.argv[1] if len(sys.argv) > 1 else "echo"
    print(json.dumps({"ready": True}), flush=True)
    for line in sys.stdin:
        req = json.loads(line)
        rid = req["id"]
        if mode == "sleep":
            time.sleep(5)
        if mode == "die":
            sys.exit(3)
        if mode == "garbage":
            print("%%% not json %%%", flush=True)
            continue
        if mode == "error_on_2" and rid == 2:
            print(json.dumps({"id": rid, "error": "synthetic"}), flush=True)
            continue
        det = {"label": "car", "confidence": 0.75,
               "bbox": {"x_min": 10.0, "y_min": 12.0, "x_max": 40.0, "y_max": 30.0}}
        print(json.dumps({"id": rid, "detections": [det]}), flush=True)
""")


@pytest.fixture
def child_script(tmp_path):
    path = tmp_path / "toy_detector.py"
    path.write_text(CHILD_TEMPLATE, encoding="utf-8")
    return path


def endpoint_for(child_script, mode, timeout_ms=10000):
    return DetectorEndpoint(kind="subprocess",
                            command=(sys.executable, str(child_script), mode),
                            timeout_ms=timeout_ms)


def test_subprocess_echo_round_trip(child_script, tmp_path):
    sample = sample_at(0.5, 0.0)
    png = tmp_path / "t.png"
    save_png(sample.image, png)
    with open_session(endpoint_for(child_script, "echo"), SPACE) as session:
        for _ in range(3):
            ds = session.detect(sample, image_path=str(png))
            assert len(ds) == 1
            assert ds.detections[0].confidence == 0.75
            assert ds.detections[0].box == BoundingBox(10.0, 12.0, 40.0, 30.0)


def test_subprocess_garbage_is_protocol_error_session_survives(child_script, tmp_path):
    sample = sample_at(0.5, 0.0)
    png = tmp_path / "t.png"
    save_png(sample.image, png)
    with open_session(endpoint_for(child_script, "garbage"), SPACE) as session:
        with pytest.raises(ProtocolError):
            session.detect(sample, image_path=str(png))


def test_subprocess_error_response_is_request_failed(child_script, tmp_path):
    sample = sample_at(0.5, 0.0)
    png = tmp_path / "t.png"
    save_png(sample.image, png)
    with open_session(endpoint_for(child_script, "error_on_2"), SPACE) as session:
        assert len(session.detect(sample, image_path=str(png))) == 1  # id 0
        assert len(session.detect(sample, image_path=str(png))) == 1  # id 1
        with pytest.raises(RequestFailed):
            session.detect(sample, image_path=str(png))               # id 2
        assert len(session.detect(sample, image_path=str(png))) == 1  # id 3: alive


def test_subprocess_timeout(child_script, tmp_path):
    sample = sample_at(0.5, 0.0)
    png = tmp_path / "t.png"
    save_png(sample.image, png)
    with open_session(endpoint_for(child_script, "sleep", timeout_ms=300), SPACE) as session:
        with pytest.raises(DetectorTimeout):
            session.detect(sample, image_path=str(png))


def test_subprocess_child_death_is_process_exit(child_script, tmp_path):
    sample = sample_at(0.5, 0.0)
    png = tmp_path / "t.png"
    save_png(sample.image, png)
    with open_session(endpoint_for(child_script, "die"), SPACE) as session:
        with pytest.raises(ProcessExit) as excinfo:
            session.detect(sample, image_path=str(png))
        assert excinfo.value.returncode == 3


def test_subprocess_requires_image_path(child_script):
    with open_session(endpoint_for(child_script, "echo"), SPACE) as session:
        with pytest.raises(ConfigError):
            session.detect(sample_at(0.5, 0.0))


def test_subprocess_bad_ready_line(tmp_path):
    script = tmp_path / "bad.py"
    script.write_text("print('hello world', flush=True)\nimport time; time.sleep(2)\n")
    with pytest.raises(ProtocolError):
        SubprocessSession(DetectorEndpoint(kind="subprocess",
                                           command=(sys.executable, str(script)),
                                           timeout_ms=5000))


# ---------------------------------------------------------------- endpoint validation

def test_endpoint_validation():
    with pytest.raises(ConfigError):
        DetectorEndpoint(kind="grpc")
    with pytest.raises(ConfigError):
        DetectorEndpoint(kind="subprocess")
    with pytest.raises(ConfigError):
        DetectorEndpoint(kind="http")
    with pytest.raises(ConfigError):
        DetectorEndpoint(kind="mock", timeout_ms=0)
    ep = DetectorEndpoint(kind="mock")
    assert ep.mock_spec is not None
