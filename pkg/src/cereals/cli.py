"""Thin HTTP client CLI.

Every subcommand talks to the service API: either a remote server given via
--server, or an ephemeral in-process server bound to a loopback port for the
duration of the command. Exit codes: 0 success, 2 configuration error,
3 learner/worker failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
import threading
import time
from pathlib import Path

import httpx

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_LEARNER = 3

POLL_INTERVAL_S = 0.3


class LocalServer:
    """Ephemeral uvicorn server on a loopback port, running in a thread."""

    def __init__(self):
        self._server = None
        self._thread = None
        self.base_url = ""

    def __enter__(self) -> "LocalServer":
        import uvicorn

        from .service import create_app

        config = uvicorn.Config(create_app(), host="127.0.0.1", port=0, log_level="warning")
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self._thread.start()
        deadline = time.time() + 30
        while not self._server.started:
            if time.time() > deadline or not self._thread.is_alive():
                raise RuntimeError("local service failed to start")
            time.sleep(0.01)
        port = self._server.servers[0].sockets[0].getsockname()[1]
        self.base_url = f"http://127.0.0.1:{port}"
        return self

    def __exit__(self, *exc) -> None:
        if self._server is not None:
            self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=10)


class Client:
    def __init__(self, base_url: str):
        self.http = httpx.Client(base_url=base_url, timeout=3600.0)

    def close(self):
        self.http.close()

    def post(self, path: str, payload: dict) -> dict:
        response = self.http.post(path, json=payload)
        return self._handle(response)

    def get(self, path: str, **params) -> dict:
        response = self.http.get(path, params=params or None)
        return self._handle(response)

    def get_text(self, path: str, **params) -> str:
        response = self.http.get(path, params=params or None)
        if response.status_code >= 400:
            self._handle(response)
        return response.text

    @staticmethod
    def _handle(response: httpx.Response) -> dict:
        if response.status_code >= 400:
            try:
                body = response.json()
            except json.JSONDecodeError:
                body = {"detail": response.text}
            code = body.get("code", "")
            detail = body.get("detail", body)
            exit_code = EXIT_CONFIG if code == "config" or response.status_code == 422 else EXIT_ERROR
            raise CliFailure(f"service error ({response.status_code}): {detail}", exit_code)
        return response.json()


class CliFailure(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def wait_for_job(client: Client, job_id: str, quiet: bool = False) -> dict:
    last_progress = None
    while True:
        status = client.get(f"/jobs/{job_id}")
        if status["progress"] != last_progress and not quiet:
            last_progress = status["progress"]
            if last_progress:
                print(
                    f"  {last_progress.get('phase', '?')}: "
                    f"{last_progress.get('done', 0)}/{last_progress.get('total', '?')}",
                    file=sys.stderr,
                )
        if status["status"] == "done":
            return status
        if status["status"] == "error":
            exit_code = {
                "config": EXIT_CONFIG,
                "learner": EXIT_LEARNER,
            }.get(status.get("error_code"), EXIT_ERROR)
            raise CliFailure(f"job {job_id} failed: {status.get('error')}", exit_code)
        time.sleep(POLL_INTERVAL_S)


# -- subcommands -----------------------------------------------------------


def cmd_generate(client: Client, args) -> int:
    spec: dict = {}
    if args.spec:
        spec = json.loads(Path(args.spec).read_text())
    for key, value in (
        ("train_images", args.images),
        ("val_images", args.val_images),
        ("height", args.size),
        ("width", args.size),
        ("num_classes", args.classes),
        ("seed", args.seed),
    ):
        if value is not None:
            spec[key] = value
    result = client.post("/datasets/generate", {"out_dir": args.out, "spec": spec})
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_reference(client: Client, args) -> int:
    payload = {"dataset_dir": args.dataset, "use_cache": not args.no_cache}
    job = client.post("/jobs/reference", payload)
    status = wait_for_job(client, job["job_id"], quiet=args.quiet)
    print(json.dumps(status["result"], indent=2))
    return EXIT_OK


def _run_config(args) -> dict:
    config: dict = {}
    if args.config:
        config = json.loads(Path(args.config).read_text())
    acquisition = config.setdefault("acquisition", {})
    fusion = acquisition.setdefault("fusion", {})
    learner = config.setdefault("learner", {})
    dump = config.setdefault("dump", {})
    if args.dataset:
        config["dataset_dir"] = args.dataset
    if args.results:
        config["results_dir"] = args.results
    if args.strategy:
        acquisition["strategy"] = args.strategy
    if args.measure:
        acquisition["measure"] = args.measure
    if args.fusion:
        fusion["kind"] = args.fusion
    if args.alpha is not None:
        fusion["alpha"] = args.alpha
    if args.region_size is not None:
        acquisition["region_size"] = args.region_size
    if args.m is not None:
        acquisition["m"] = args.m
    if args.cost_mode:
        config["cost_mode"] = args.cost_mode
    if args.seed_images is not None:
        config["seed_images"] = args.seed_images
    if args.repetitions is not None:
        config["repetitions"] = args.repetitions
    if args.max_rounds is not None:
        config["max_rounds"] = args.max_rounds
    if args.rng_seed is not None:
        config["rng_seed"] = args.rng_seed
    if args.stop_at_target:
        config["stop_at_target"] = True
    if args.learner:
        learner["kind"] = args.learner.upper()
    if args.worker_cmd:
        learner["worker_cmd"] = shlex.split(args.worker_cmd)
    if args.dump_info_maps:
        dump["info_maps_dir"] = args.dump_info_maps
    if args.dump_cost_maps:
        dump["cost_maps_dir"] = args.dump_cost_maps
    if args.dump_region_maps:
        dump["region_maps_dir"] = args.dump_region_maps
    if args.plot:
        config["plot"] = True
    return config


def cmd_run(client: Client, args) -> int:
    config = _run_config(args)
    job = client.post("/jobs/experiment", {"config": config})
    print(f"experiment job {job['job_id']}", file=sys.stderr)
    status = wait_for_job(client, job["job_id"], quiet=args.quiet)
    result = status["result"]
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_report(client: Client, args) -> int:
    result = client.post("/reports", {"results_dir": args.results})
    print(result["table"])
    if args.json:
        print(json.dumps(result["summary"], indent=2))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cereals",
        description="Cost-aware region-based active learning for semantic segmentation",
    )
    parser.add_argument("--server", default=None, help="remote service URL (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="dataset spec JSON file")
    p.add_argument("--images", type=int, help="train image count")
    p.add_argument("--val-images", type=int)
    p.add_argument("--size", type=int, help="square image side")
    p.add_argument("--classes", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("reference", help="train on the full training split (p100)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("run", help="run an active-learning experiment")
    p.add_argument("--config", help="experiment config JSON file")
    p.add_argument("--dataset")
    p.add_argument("--results")
    p.add_argument("--strategy", choices=["IMAGE_RANDOM", "IMAGE_SCORE", "REGION_RANDOM", "REGION_SCORE"])
    p.add_argument("--measure", choices=["ENTROPY", "VOTE_ENTROPY", "NONE"])
    p.add_argument("--fusion", choices=["G1", "G2", "G3", "INFO_ONLY"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--region-size", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--cost-mode", choices=["oracle", "builtin", "external"])
    p.add_argument("--seed-images", type=int)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--rng-seed", type=int)
    p.add_argument("--stop-at-target", action="store_true")
    p.add_argument("--learner", choices=["builtin", "external"])
    p.add_argument("--worker-cmd", help="external worker command line")
    p.add_argument("--dump-info-maps", metavar="DIR")
    p.add_argument("--dump-cost-maps", metavar="DIR")
    p.add_argument("--dump-region-maps", metavar="DIR")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("report", help="print the summary of a results directory")
    p.add_argument("--results", required=True)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return cmd_serve(args)

    handler = {
        "generate": cmd_generate,
        "reference": cmd_reference,
        "run": cmd_run,
        "report": cmd_report,
    }[args.command]

    try:
        if args.server:
            client = Client(args.server)
            try:
                return handler(client, args)
            finally:
                client.close()
        with LocalServer() as server:
            client = Client(server.base_url)
            try:
                return handler(client, args)
            finally:
                client.close()
    except CliFailure as failure:
        print(f"error: {failure}", file=sys.stderr)
        return failure.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
