"""Stdio session loop: one JSON request per line, one JSON response per line.

Errors are structured responses and never kill the session; only EOF does.
All tensors are exchanged as .dmt files referenced by absolute paths.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import PROTOCOL_VERSION
from .dmt import DmtError, read_dmt, write_dmt
from .model import WorkerModel


def error(code: str, message: str, **extra) -> dict:
    return {"status": "error", "code": code, "message": message, **extra}


class Session:
    def __init__(self, workdir: Path):
        self.workdir = workdir
        self.model = WorkerModel()

    def handle(self, request: dict) -> dict:
        cmd = request.get("cmd")
        handler = getattr(self, f"do_{cmd}", None) if isinstance(cmd, str) else None
        if handler is None:
            return error("unknown_cmd", f"unknown cmd {cmd!r}")
        try:
            return handler(request)
        except KeyError as exc:
            return error("bad_request", f"missing field {exc}")
        except (DmtError, OSError) as exc:
            return error("io_error", str(exc))
        except RuntimeError as exc:
            return error("not_trained", str(exc))
        except ValueError as exc:
            return error("bad_request", str(exc))

    # -- commands ----------------------------------------------------------

    @staticmethod
    def _load_items(entries, *tensors):
        items = []
        for entry in entries:
            item = {"image_id": entry["image_id"]}
            for tensor in tensors:
                item[tensor] = read_dmt(entry[tensor])
            items.append(item)
        return items

    def do_train_seg(self, request: dict) -> dict:
        train = self._load_items(request["train"], "features", "labels", "mask")
        val = self._load_items(request["val"], "features", "labels")
        outcome = self.model.train_seg(
            train,
            val,
            classes=int(request["classes"]),
            seed=int(request["seed"]),
            patience=int(request["patience"]),
            max_epochs=int(request["max_epochs"]),
            dropout=float(request.get("dropout", 0.25)),
        )
        return {
            "status": "ok",
            "epochs_run": outcome.epochs_run,
            "best_val_miou": outcome.best_score,
            "converged": outcome.converged,
        }

    def do_predict_probs(self, request: dict) -> dict:
        features = read_dmt(request["features"])
        probs = self.model.seg_probs(features)
        out = request["out"]
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        write_dmt(out, probs)
        return {"status": "ok", "out": out}

    def do_predict_committee(self, request: dict) -> dict:
        features = read_dmt(request["features"])
        out_dir = Path(request["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        outs = []
        for member in range(int(request["n_members"])):
            probs = self.model.committee_member(features, request["image_id"], member)
            path = str(out_dir / f"member_{member:02d}.dmt")
            write_dmt(path, probs)
            outs.append(path)
        return {"status": "ok", "outs": outs}

    def do_train_cost(self, request: dict) -> dict:
        train = self._load_items(request["train"], "features", "clicks", "mask")
        outcome = self.model.train_cost(
            train,
            seed=int(request["seed"]),
            patience=int(request["patience"]),
            max_epochs=int(request["max_epochs"]),
        )
        return {
            "status": "ok",
            "epochs_run": outcome.epochs_run,
            "best_val_miou": outcome.best_score,
            "converged": outcome.converged,
        }

    def do_predict_cost(self, request: dict) -> dict:
        features = read_dmt(request["features"])
        cost = self.model.cost_map(features)
        out = request["out"]
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        write_dmt(out, cost)
        return {"status": "ok", "out": out}


def serve(stdin, stdout, workdir: Path) -> None:
    session = Session(workdir)
    stdout.write(json.dumps({"status": "ready", "protocol": PROTOCOL_VERSION}) + "\n")
    stdout.flush()
    for line in stdin:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            response = error("bad_json", "request line is not valid JSON", echo=line.rstrip("\n"))
            stdout.write(json.dumps(response, sort_keys=True) + "\n")
            stdout.flush()
            continue
        response = session.handle(request if isinstance(request, dict) else {})
        if isinstance(request, dict) and "id" in request:
            response = {"id": request["id"], **response}
        stdout.write(json.dumps(response, sort_keys=True) + "\n")
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cereals-worker")
    parser.add_argument("--workdir", required=True)
    args = parser.parse_args(argv)
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    serve(sys.stdin, sys.stdout, workdir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
