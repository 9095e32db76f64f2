"""Reference policy servers speaking the /act protocol.

``serve_policy`` wraps any object with an ``act(proprio, step, horizon)``
method in a small threaded HTTP server; the module is also runnable:

    python -m splateval.policy_server --scene scene.psd --kind oracle --port 8777
"""

from __future__ import annotations

import argparse
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np


class PolicyHTTPServer:
    def __init__(self, policy, host: str = "127.0.0.1", port: int = 0, horizon: int = 10):
        self.policy = policy
        self.horizon = horizon
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                if self.path.rstrip("/") != "/act":
                    self.send_error(404, "unknown endpoint")
                    return
                try:
                    length = int(self.headers.get("Content-Length", "0"))
                    doc = json.loads(self.rfile.read(length))
                    proprio = np.array(doc["proprio"], dtype=float)
                    step = int(doc["step"])
                    actions, done = outer.policy.act(proprio, step, horizon=outer.horizon)
                    body = json.dumps(
                        {"actions": [[float(v) for v in row] for row in np.asarray(actions)], "done": bool(done)}
                    ).encode()
                except Exception as exc:  # surface as a structured 500
                    body = json.dumps({"error": str(exc)}).encode()
                    self.send_response(500)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                    return
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):  # keep tests quiet
                pass

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "PolicyHTTPServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> "PolicyHTTPServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_policy(policy, host: str = "127.0.0.1", port: int = 0, horizon: int = 10) -> PolicyHTTPServer:
    return PolicyHTTPServer(policy, host, port, horizon)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Run a reference policy server")
    parser.add_argument("--scene", required=True, help="scene descriptor the script plans against")
    parser.add_argument("--kind", choices=["oracle", "graded", "zero", "replay"], default="oracle")
    parser.add_argument("--port", type=int, default=8777)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--horizon", type=int, default=10)
    parser.add_argument("--stop-after-stage", type=int, default=99)
    parser.add_argument("--noise", type=float, default=0.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--recording", help="CSV of action rows for --kind replay")
    args = parser.parse_args(argv)

    from .policy import ReplayPolicy, ZeroTargetPolicy
    from .synthetic import scripted_policy_for_scene

    if args.kind == "zero":
        policy = ZeroTargetPolicy()
    elif args.kind == "replay":
        if not args.recording:
            parser.error("--kind replay requires --recording")
        policy = ReplayPolicy(np.loadtxt(args.recording, delimiter=",", ndmin=2))
    else:
        from .policy import ScriptedCompetence
        from .scene import load_scene

        scene = load_scene(args.scene)
        competence = ScriptedCompetence(
            stop_after_stage=args.stop_after_stage, noise_scale=args.noise, seed=args.seed
        )
        policy = scripted_policy_for_scene(scene, competence)

    server = serve_policy(policy, host=args.host, port=args.port, horizon=args.horizon)
    server.start()
    print(f"policy server ({args.kind}) listening on {server.endpoint}", flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
