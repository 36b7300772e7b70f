"""Newline-delimited message protocol, version 1.

One JSON object per line, UTF-8.  Floats are written with 17 significant
digits so every binary64 value survives a round trip bit-for-bit; NaN and
infinities are rejected outright.  Field order follows construction order
and is fixed by the schema below.

Request kinds:   hello, reset, step, close
Response kinds:  ready, state, error
Error codes:     parse, order, action, config, internal
"""

from __future__ import annotations

import json
import re
from typing import Any

PROTOCOL_VERSION = 1

REQUEST_KINDS = ("hello", "reset", "step", "close")
RESPONSE_KINDS = ("ready", "state", "error")
ERROR_CODES = ("parse", "order", "action", "config", "internal")

_INT_RE = re.compile(r"^-?[0-9]+$")


class ProtocolError(ValueError):
    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


def _format_float(x: float) -> str:
    if x != x or x in (float("inf"), float("-inf")):
        raise ProtocolError("internal", "non-finite float on the wire")
    s = format(x, ".17g")
    # Keep the value a float after parsing.
    if _INT_RE.match(s):
        s += ".0"
    return s


def _write(value: Any, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, float):
        out.append(_format_float(value))
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _write(item, out)
        out.append("]")
    elif isinstance(value, dict):
        out.append("{")
        for i, (key, item) in enumerate(value.items()):
            if not isinstance(key, str):
                raise ProtocolError("internal", f"non-string key {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _write(item, out)
        out.append("}")
    else:
        raise ProtocolError("internal", f"unserializable value of type {type(value).__name__}")


def encode(message: dict[str, Any]) -> str:
    """Serialize one message to a single line (without the newline)."""
    if "kind" not in message:
        raise ProtocolError("internal", "message lacks a kind")
    out: list[str] = []
    _write(message, out)
    return "".join(out)


def parse(line: str) -> dict[str, Any]:
    """Parse one line into a message dict; malformed input raises parse."""
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError("parse", f"invalid JSON: {exc}") from exc
    if not isinstance(msg, dict) or not isinstance(msg.get("kind"), str):
        raise ProtocolError("parse", "message must be an object with a string 'kind'")
    return msg


def hello() -> dict[str, Any]:
    return {"kind": "hello", "protocol_version": PROTOCOL_VERSION}


def reset(config_ref: str, seed: int, mode: str) -> dict[str, Any]:
    return {"kind": "reset", "config_ref": config_ref, "seed": seed, "mode": mode}


def step(action: dict[str, Any]) -> dict[str, Any]:
    return {"kind": "step", "action": action}


def close() -> dict[str, Any]:
    return {"kind": "close"}


def ready(observation_layouts: dict[str, Any], action_spaces: dict[str, Any]) -> dict[str, Any]:
    return {
        "kind": "ready",
        "protocol_version": PROTOCOL_VERSION,
        "observation_layout": observation_layouts,
        "action_spaces": action_spaces,
    }


def state(
    observation: list[float], reward: float | None, done: bool, info: dict[str, Any]
) -> dict[str, Any]:
    return {
        "kind": "state",
        "observation": [float(x) for x in observation],
        "reward": None if reward is None else float(reward),
        "done": bool(done),
        "info": info,
    }


def error(code: str, detail: str) -> dict[str, Any]:
    if code not in ERROR_CODES:
        code = "internal"
    return {"kind": "error", "code": code, "detail": detail}
