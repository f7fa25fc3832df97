"""Newline-delimited JSON env server.

Each line in is one request, each line out one response carrying the
request's ``seq``.  Messages are written in canonical form (sorted keys, no
spaces) so equal content means equal bytes.  See docs/protocol.md.
"""
from __future__ import annotations

import base64
import json
import socketserver
import sys
from typing import IO, Callable, Sequence

import numpy as np

from .env import EnvConfig, EnvError, EpisodeRejected, Observation, PruningEnv, StepResult
from .episodes import Episode

__all__ = [
    "PROTOCOL_VERSION",
    "ProtocolError",
    "encode_message",
    "decode_message",
    "encode_observation",
    "decode_observation",
    "observation_bundle",
    "step_bundle",
    "Session",
    "serve_stream",
    "serve_tcp",
]

PROTOCOL_VERSION = "1"
OBS_SPEC = {
    "flow": {"dtype": "<f4", "shape": [2, 224, 224]},
    "cutpoint_img": {"dtype": "u1", "shape": [1, 224, 224]},
    "proprio": {"shape": [27]},
    "cutpoint_base": {"shape": [3]},
    "cutpoint_ee": {"shape": [3]},
}
ACTION_SPEC = {"shape": [6], "low": -1.0, "high": 1.0}


class ProtocolError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def encode_message(msg: dict) -> str:
    return json.dumps(msg, sort_keys=True, separators=(",", ":"), allow_nan=False)


def decode_message(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError("EPARSE", f"not JSON: {exc.msg}") from None
    if not isinstance(msg, dict):
        raise ProtocolError("EPARSE", "message must be a JSON object")
    return msg


def _floats(x) -> list:
    return [float(v) for v in np.asarray(x, dtype=float).ravel()]


def encode_observation(obs: Observation) -> dict:
    return {
        "flow": base64.b64encode(np.ascontiguousarray(obs.flow, dtype="<f4").tobytes()).decode("ascii"),
        "cutpoint_img": base64.b64encode(np.ascontiguousarray(obs.cutpoint_img, dtype=np.uint8).tobytes()).decode("ascii"),
        "proprio": _floats(obs.proprio),
        "cutpoint_base": _floats(obs.p_g_base),
        "cutpoint_ee": _floats(obs.p_g_ee),
    }


def decode_observation(d: dict) -> Observation:
    flow = np.frombuffer(base64.b64decode(d["flow"], validate=True), dtype="<f4")
    img = np.frombuffer(base64.b64decode(d["cutpoint_img"], validate=True), dtype=np.uint8)
    if flow.size != 2 * 224 * 224 or img.size != 224 * 224:
        raise ProtocolError("EBADREQ", "image payload has the wrong length")
    vecs = [np.asarray(d[k], dtype=float) for k in ("proprio", "cutpoint_base", "cutpoint_ee")]
    if [v.shape for v in vecs] != [(27,), (3,), (3,)]:
        raise ProtocolError("EBADREQ", "vector payload has the wrong length")
    return Observation(flow.reshape(2, 224, 224).astype(np.float32), img.reshape(1, 224, 224).copy(), *vecs)


def _clean(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    return v


def observation_bundle(obs: Observation, seq) -> dict:
    return {"seq": seq, "type": "observation", "observation": encode_observation(obs)}


def step_bundle(res: StepResult, seq) -> dict:
    return {
        "seq": seq,
        "type": "step",
        "observation": encode_observation(res.observation),
        "reward": _clean(res.reward.to_dict()),
        "terminated": bool(res.terminated),
        "truncated": bool(res.truncated),
        "info": _clean(res.info),
    }


class Session:
    """One client, one environment, strict request/response alternation."""

    def __init__(self, env: PruningEnv, episodes: Sequence[Episode]):
        self.env = env
        self.episodes = {ep.id: ep for ep in episodes}
        self.ready = False
        self.closed = False

    def handle(self, msg: dict) -> dict:
        seq = msg.get("seq")
        try:
            return self._dispatch(msg, seq)
        except ProtocolError as exc:
            return {"seq": seq, "type": "error", "code": exc.code, "message": exc.message}
        except EpisodeRejected as exc:
            self.ready = False
            return {"seq": seq, "type": "error", "code": "EREJECT", "message": str(exc)}
        except Exception as exc:  # the session must survive
            self.ready = False
            return {"seq": seq, "type": "error", "code": "EINTERNAL", "message": f"{type(exc).__name__}: {exc}"}

    def _dispatch(self, msg: dict, seq) -> dict:
        if not isinstance(seq, int) or isinstance(seq, bool):
            raise ProtocolError("EBADREQ", "seq must be an integer")
        kind = msg.get("type")
        if kind == "hello":
            return {"seq": seq, "type": "hello_ack", "version": PROTOCOL_VERSION, "observation": OBS_SPEC,
                    "action": ACTION_SPEC}
        if kind == "reset":
            ep = self.episodes.get(msg.get("episode"))
            if ep is None:
                raise ProtocolError("ENOEP", f"unknown episode {msg.get('episode')!r}")
            self.ready = False
            obs = self.env.reset(ep)
            self.ready = True
            return observation_bundle(obs, seq)
        if kind == "step":
            if not self.ready:
                raise ProtocolError("EORDER", "step before reset or after the episode ended")
            action = msg.get("action")
            try:
                a = np.asarray(action, dtype=float)
            except (TypeError, ValueError):
                raise ProtocolError("EBADREQ", "action must be six numbers") from None
            if a.shape != (6,) or not np.all(np.isfinite(a)):
                raise ProtocolError("EBADREQ", "action must be six finite numbers")
            try:
                res = self.env.step(a)
            except EnvError as exc:
                raise ProtocolError("EORDER", str(exc)) from None
            if res.terminated or res.truncated:
                self.ready = False
            return step_bundle(res, seq)
        if kind == "close":
            self.closed = True
            return {"seq": seq, "type": "bye"}
        raise ProtocolError("EBADREQ", f"unknown request type {kind!r}")

    def handle_line(self, line: str) -> str:
        try:
            msg = decode_message(line)
        except ProtocolError as exc:
            return encode_message({"seq": None, "type": "error", "code": exc.code, "message": exc.message})
        return encode_message(self.handle(msg))


def serve_stream(session: Session, inp: IO[str] = sys.stdin, out: IO[str] = sys.stdout) -> None:
    for line in inp:
        if not line.strip():
            continue
        out.write(session.handle_line(line) + "\n")
        out.flush()
        if session.closed:
            break


def serve_tcp(make_session: Callable[[], Session], host: str = "127.0.0.1", port: int = 0,
              ready: Callable[[int], None] | None = None) -> None:
    """Serve until interrupted; one thread and one env per connection."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            session = make_session()
            for raw in self.rfile:
                line = raw.decode("utf-8", errors="replace")
                if not line.strip():
                    continue
                self.wfile.write((session.handle_line(line) + "\n").encode())
                self.wfile.flush()
                if session.closed:
                    break

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    with Server((host, port), Handler) as srv:
        if ready is not None:
            ready(srv.server_address[1])
        srv.serve_forever()


def default_env_factory(bank, config: EnvConfig | None = None) -> Callable[[], PruningEnv]:
    return lambda: PruningEnv(bank, config)
