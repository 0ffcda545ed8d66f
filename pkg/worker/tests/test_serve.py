import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cereals_worker.dmt import read_dmt, write_dmt

WORKER = [sys.executable, "-m", "cereals_worker"]
TRANSCRIPT = Path(__file__).parent / "data" / "protocol_transcript.jsonl"


class Worker:
    def __init__(self, workdir):
        self.proc = subprocess.Popen(
            WORKER + ["--workdir", str(workdir)],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self.ready = json.loads(self.proc.stdout.readline())

    def ask(self, request) -> dict:
        line = request if isinstance(request, str) else json.dumps(request, sort_keys=True)
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        return json.loads(self.proc.stdout.readline())

    def ask_raw(self, request) -> str:
        line = request if isinstance(request, str) else json.dumps(request, sort_keys=True)
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        return self.proc.stdout.readline().rstrip("\n")

    def close(self):
        self.proc.stdin.close()
        self.proc.wait(timeout=30)


@pytest.fixture
def worker(tmp_path):
    w = Worker(tmp_path / "work")
    yield w
    w.close()


def seed_tensors(base: Path, rng=None):
    rng = rng or np.random.default_rng(1234)
    base.mkdir(parents=True, exist_ok=True)
    features = rng.normal(size=(8, 8, 3)).astype(np.float32)
    labels = rng.integers(0, 3, size=(8, 8, 1)).astype(np.float32)
    write_dmt(base / "fx.dmt", features)
    write_dmt(base / "labels.dmt", labels)
    write_dmt(base / "mask.dmt", np.ones((8, 8, 1), dtype=np.float32))
    write_dmt(base / "clicks.dmt", np.zeros((8, 8, 1), dtype=np.float32))
    return base


def train_request(base: Path, request_id=1):
    return {
        "id": request_id,
        "cmd": "train_seg",
        "classes": 3,
        "seed": 42,
        "patience": 5,
        "max_epochs": 15,
        "dropout": 0.25,
        "train": [
            {
                "image_id": "img_a",
                "features": str(base / "fx.dmt"),
                "labels": str(base / "labels.dmt"),
                "mask": str(base / "mask.dmt"),
            }
        ],
        "val": [
            {
                "image_id": "val_a",
                "features": str(base / "fx.dmt"),
                "labels": str(base / "labels.dmt"),
            }
        ],
    }


def test_ready_line(worker):
    assert worker.ready == {"status": "ready", "protocol": 1}


def test_full_command_cycle(worker, tmp_path):
    base = seed_tensors(tmp_path / "tensors")
    response = worker.ask(train_request(base))
    assert response["status"] == "ok"
    assert response["id"] == 1
    assert response["epochs_run"] >= 1

    out = tmp_path / "out" / "probs.dmt"
    response = worker.ask(
        {"id": 2, "cmd": "predict_probs", "image_id": "img_a", "features": str(base / "fx.dmt"), "out": str(out)}
    )
    assert response["status"] == "ok"
    probs = read_dmt(response["out"])
    assert probs.shape == (8, 8, 3)
    assert np.allclose(probs.sum(axis=2), 1.0, atol=1e-5)

    committee_request = {
        "id": 3,
        "cmd": "predict_committee",
        "image_id": "img_a",
        "features": str(base / "fx.dmt"),
        "n_members": 3,
        "out_dir": str(tmp_path / "out" / "committee"),
    }
    response = worker.ask(committee_request)
    assert response["status"] == "ok"
    members = [read_dmt(p) for p in response["outs"]]
    assert len(members) == 3
    for probs in members:
        assert np.allclose(probs.sum(axis=2), 1.0, atol=1e-5)
    # repeated committee requests reproduce identical member files
    again = worker.ask({**committee_request, "id": 30})
    for before, path in zip(members, again["outs"]):
        assert np.array_equal(before, read_dmt(path))

    response = worker.ask(
        {
            "id": 4,
            "cmd": "train_cost",
            "seed": 43,
            "patience": 5,
            "max_epochs": 15,
            "train": [
                {
                    "image_id": "img_a",
                    "features": str(base / "fx.dmt"),
                    "clicks": str(base / "clicks.dmt"),
                    "mask": str(base / "mask.dmt"),
                }
            ],
        }
    )
    assert response["status"] == "ok"

    response = worker.ask(
        {"id": 5, "cmd": "predict_cost", "image_id": "img_a", "features": str(base / "fx.dmt"), "out": str(tmp_path / "out" / "cost.dmt")}
    )
    assert response["status"] == "ok"
    cost = read_dmt(response["out"])
    assert cost.shape == (8, 8, 1)
    assert np.all(cost >= 0)


def test_unknown_cmd_keeps_session(worker, tmp_path):
    response = worker.ask({"id": 1, "cmd": "nope"})
    assert response == {
        "code": "unknown_cmd",
        "id": 1,
        "message": "unknown cmd 'nope'",
        "status": "error",
    }
    base = seed_tensors(tmp_path / "tensors")
    assert worker.ask(train_request(base, request_id=2))["status"] == "ok"


def test_malformed_json_echoed(worker):
    response = worker.ask("not json {{{")
    assert response["status"] == "error"
    assert response["code"] == "bad_json"
    assert response["echo"] == "not json {{{"


def test_predict_before_train_is_structured_error(worker, tmp_path):
    base = seed_tensors(tmp_path / "tensors")
    response = worker.ask(
        {"id": 1, "cmd": "predict_probs", "image_id": "x", "features": str(base / "fx.dmt"), "out": str(tmp_path / "o.dmt")}
    )
    assert response["status"] == "error"
    assert response["code"] == "not_trained"


def test_missing_field_is_structured_error(worker):
    response = worker.ask({"id": 9, "cmd": "train_seg", "classes": 3})
    assert response["status"] == "error"
    assert response["code"] == "bad_request"


def test_missing_file_is_io_error(worker, tmp_path):
    request = train_request(tmp_path / "nowhere")
    response = worker.ask(request)
    assert response["status"] == "error"
    assert response["code"] == "io_error"


def test_repeated_request_is_deterministic(tmp_path):
    responses = []
    for run in range(2):
        worker = Worker(tmp_path / f"w{run}")
        base = seed_tensors(tmp_path / f"t{run}")
        responses.append(worker.ask(train_request(base)))
        worker.close()
    assert responses[0] == responses[1]


def test_golden_transcript_replay(tmp_path):
    work = tmp_path / "work"
    base = seed_tensors(work / "tensors")
    (work / "out").mkdir(parents=True, exist_ok=True)
    worker = Worker(work)
    try:
        for raw in TRANSCRIPT.read_text().splitlines():
            if not raw.strip():
                continue
            entry = json.loads(raw)
            request_line = entry["request"].replace("{WORK}", str(work))
            expected = entry["response"].replace("{WORK}", str(work))
            got = worker.ask_raw(request_line)
            assert got == expected
    finally:
        worker.close()
