"""Line-delimited JSON bridge to an environment running in a child process.

Wire format (one JSON object per line):

* child -> parent, once at start-up::

    {"obs_dim": 3, "act_dim": 1, "action_low": [-2.0], "action_high": [2.0]}

  ``"name"`` and ``"max_episode_steps"`` are optional extras.
* parent -> child::

    {"id": 7, "op": "reset"}
    {"id": 8, "op": "step", "action": [0.25]}

* child -> parent, exactly one reply per request, echoing its id::

    {"id": 8, "obs": [...], "reward": -1.5, "terminated": false, "truncated": false}

Exactly one request is in flight at a time.
"""

from __future__ import annotations

import collections
import json
import math
import queue
import shlex
import subprocess
import threading

import numpy as np

from ..numcore import Rng
from .base import EnvSpec, EpisodeOver, StepResult

__all__ = ["BridgeEnv", "BridgeError", "BridgeProtocolError", "BridgeTimeout", "bridge_env"]

_EOF = object()


class BridgeError(RuntimeError):
    pass


class BridgeProtocolError(BridgeError):
    pass


class BridgeTimeout(BridgeError):
    pass


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


class BridgeEnv:
    def __init__(self, command, spec: EnvSpec | None = None, timeout: float = 10.0, name: str = "bridge"):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self._next_id = 0
        self.requests_sent = 0
        self.replies_received = 0
        self._active = False
        self._stderr = collections.deque(maxlen=20)
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeError(f"cannot start bridge child {self.command}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()
        self.spec = self._handshake(spec, name)

    def _pump_stdout(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _pump_stderr(self):
        for line in self._proc.stderr:
            self._stderr.append(line.rstrip("\n"))

    def _diagnostics(self) -> str:
        tail = "\n".join(self._stderr)
        return f" (child stderr: {tail})" if tail else ""

    def _read_line(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise BridgeTimeout(f"bridge child sent nothing within {self.timeout}s") from None
        if line is _EOF:
            code = self._proc.wait(timeout=self.timeout)
            raise BridgeError(f"bridge child exited with code {code}{self._diagnostics()}")
        return line.rstrip("\n")

    def _parse(self, line: str) -> dict:
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"malformed bridge line {line!r}: {exc.msg}") from None
        if not isinstance(msg, dict):
            raise BridgeProtocolError(f"bridge line is not a JSON object: {line!r}")
        return msg

    def _handshake(self, expected: EnvSpec | None, name: str) -> EnvSpec:
        line = self._read_line()
        msg = self._parse(line)
        try:
            obs_dim, act_dim = msg["obs_dim"], msg["act_dim"]
            low, high = msg["action_low"], msg["action_high"]
        except KeyError as exc:
            raise BridgeProtocolError(f"handshake {line!r} lacks field {exc.args[0]!r}") from None
        if not (isinstance(low, list) and isinstance(high, list) and all(map(_is_number, low + high))):
            raise BridgeProtocolError(f"handshake {line!r} has non-numeric action bounds")
        try:
            spec = EnvSpec(
                msg.get("name", name),
                int(obs_dim),
                int(act_dim),
                tuple(float(v) for v in low),
                tuple(float(v) for v in high),
                int(msg.get("max_episode_steps", 10**9)),
            )
        except ValueError as exc:
            raise BridgeProtocolError(f"handshake {line!r} is inconsistent: {exc}") from None
        if expected is not None and (expected.obs_dim, expected.act_dim) != (spec.obs_dim, spec.act_dim):
            raise BridgeProtocolError(
                f"child advertises obs_dim={spec.obs_dim}, act_dim={spec.act_dim}; "
                f"expected obs_dim={expected.obs_dim}, act_dim={expected.act_dim}"
            )
        return spec

    def _request(self, payload: dict) -> dict:
        if self._proc.poll() is not None:
            raise BridgeError(f"bridge child exited with code {self._proc.returncode}{self._diagnostics()}")
        rid = self._next_id
        self._next_id += 1
        try:
            self._proc.stdin.write(json.dumps({"id": rid, **payload}) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(f"cannot write to bridge child: {exc}{self._diagnostics()}") from None
        self.requests_sent += 1
        line = self._read_line()
        msg = self._parse(line)
        if msg.get("id") != rid:
            raise BridgeProtocolError(f"reply {line!r} does not answer request id {rid}")
        obs = msg.get("obs")
        if not (isinstance(obs, list) and len(obs) == self.spec.obs_dim and all(map(_is_number, obs))):
            raise BridgeProtocolError(f"reply {line!r} needs 'obs' with {self.spec.obs_dim} finite numbers")
        if not _is_number(msg.get("reward")):
            raise BridgeProtocolError(f"reply {line!r} needs a finite numeric 'reward'")
        for flag in ("terminated", "truncated"):
            if not isinstance(msg.get(flag), bool):
                raise BridgeProtocolError(f"reply {line!r} needs boolean {flag!r}")
        self.replies_received += 1
        return msg

    def reset(self, rng: Rng | None = None) -> np.ndarray:
        msg = self._request({"op": "reset"})
        self._active = True
        return np.array(msg["obs"], dtype=np.float64)

    def step(self, action) -> StepResult:
        if not self._active:
            raise EpisodeOver(f"{self.spec.name}: step() called on a finished episode; call reset() first")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (self.spec.act_dim,):
            raise ValueError(f"{self.spec.name}: action must have {self.spec.act_dim} entries, got {a.shape[0]}")
        a = np.clip(a, self.spec.action_low, self.spec.action_high)
        msg = self._request({"op": "step", "action": a.tolist()})
        result = StepResult(
            np.array(msg["obs"], dtype=np.float64), float(msg["reward"]), msg["terminated"], msg["truncated"]
        )
        if result.done:
            self._active = False
        return result

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def bridge_env(command, spec: EnvSpec | None = None, timeout: float = 10.0) -> BridgeEnv:
    return BridgeEnv(command, spec=spec, timeout=timeout)
