"""Environment server: exposes episodes to external policy processes.

One session owns one environment.  Transport is either stdio (child-process
mode) or TCP with one thread per connection; sessions share nothing.
"""

from __future__ import annotations

import socket
import socketserver
import sys
import threading
from pathlib import Path
from typing import Any, TextIO

from . import protocol
from .config import ConfigError, MarketConfig, load_config
from .core import FeeSchedule
from .envs import (
    FEE_SETTING,
    MATCHING,
    MODES,
    ActionError,
    EpisodeRunner,
    RegulationRegime,
    fee_action_space,
    layout_descriptor,
    observation_layout,
)
from .matching import RULES, MatchingStrategy, all_strategies


def load_run_config(path: str | Path) -> tuple[MarketConfig, RegulationRegime, FeeSchedule | None]:
    """Read a run document: market config plus optional regime and fees."""
    import json

    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load run config {path}: {exc}") from exc
    if "market" in data:
        market = MarketConfig.from_dict(data["market"])
        regime = (
            RegulationRegime.from_dict(data["regime"]) if "regime" in data else RegulationRegime.laissez_faire()
        )
        fixed = FeeSchedule(*data["fixed_fees"]) if "fixed_fees" in data else None
        return market, regime, fixed
    return MarketConfig.from_dict(data), RegulationRegime.laissez_faire(), None


def action_space_descriptor(config: MarketConfig) -> dict[str, Any]:
    grid = config.fee_grid
    return {
        "fee_setting": {
            "pb_ticks": len(grid.subscription_levels()),
            "ps_ticks": len(grid.subscription_levels()),
            "pr_ticks": len(grid.referral_levels()),
            "subscription_tick": grid.subscription_tick,
            "referral_tick": grid.referral_tick,
        },
        "matching": {
            "rules": list(RULES),
            "threshold_ticks": 11,
            "actions": [
                {"rule": RULES.index(s.rule), "threshold_tick": s.threshold_tick}
                for s in all_strategies()
            ],
        },
    }


def decode_fee_action(action: Any, config: MarketConfig) -> FeeSchedule:
    if not isinstance(action, dict):
        raise ActionError("fee action must be an object with pb_tick/ps_tick/pr_tick")
    try:
        pb_tick, ps_tick, pr_tick = (int(action[k]) for k in ("pb_tick", "ps_tick", "pr_tick"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ActionError(f"malformed fee action: {exc}") from exc
    subs = config.fee_grid.subscription_levels()
    refs = config.fee_grid.referral_levels()
    if not (0 <= pb_tick < len(subs) and 0 <= ps_tick < len(subs) and 0 <= pr_tick < len(refs)):
        raise ActionError("fee tick out of range")
    return FeeSchedule(subs[pb_tick], subs[ps_tick], refs[pr_tick])


def decode_matching_action(action: Any) -> MatchingStrategy:
    if not isinstance(action, dict):
        raise ActionError("matching action must be an object with rule/threshold_tick")
    try:
        rule = int(action["rule"])
        tick = int(action["threshold_tick"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ActionError(f"malformed matching action: {exc}") from exc
    if rule not in (0, 1) or not 0 <= tick <= 10:
        raise ActionError("matching action out of range")
    return MatchingStrategy(RULES[rule], tick / 10.0)


class Session:
    """Protocol state machine for one client connection."""

    def __init__(self, config_dir: str | Path):
        self.config_dir = Path(config_dir)
        self.runner: EpisodeRunner | None = None
        self.done = True

    def _default_layouts(self) -> tuple[dict[str, Any], dict[str, Any]]:
        default = self.config_dir / "default.json"
        if not default.exists():
            return {}, {}
        try:
            config, _, _ = load_run_config(default)
        except ConfigError:
            return {}, {}
        layouts = {
            mode: layout_descriptor(
                observation_layout(config.n_buyers, config.n_sellers, mode, config.observe_time)
            )
            for mode in MODES
        }
        return layouts, action_space_descriptor(config)

    def handle(self, message: dict[str, Any]) -> dict[str, Any] | None:
        """Process one request; returns the response, or None to end the session."""
        kind = message.get("kind")
        try:
            if kind == "hello":
                layouts, actions = self._default_layouts()
                return protocol.ready(layouts, actions)
            if kind == "reset":
                return self._reset(message)
            if kind == "step":
                return self._step(message)
            if kind == "close":
                return None
            return protocol.error("parse", f"unknown request kind {kind!r}")
        except protocol.ProtocolError as exc:
            return protocol.error(exc.code, exc.detail)
        except ActionError as exc:
            return protocol.error("action", str(exc))
        except ConfigError as exc:
            return protocol.error("config", str(exc))
        except Exception as exc:  # pragma: no cover - defensive
            return protocol.error("internal", f"{type(exc).__name__}: {exc}")

    def _reset(self, message: dict[str, Any]) -> dict[str, Any]:
        ref = message.get("config_ref", "default")
        seed = message.get("seed")
        mode = message.get("mode")
        if not isinstance(seed, int):
            raise protocol.ProtocolError("parse", "reset needs an integer seed")
        if mode not in MODES:
            raise protocol.ProtocolError("parse", f"reset mode must be one of {MODES}")
        name = ref if str(ref).endswith(".json") else f"{ref}.json"
        path = self.config_dir / name
        if not path.exists():
            raise ConfigError(f"unknown config_ref {ref!r}")
        config, regime, fixed = load_run_config(path)
        self.runner = EpisodeRunner(config, mode, regime, seed, fixed_fees=fixed)
        obs = self.runner.reset()
        self.done = False
        layout = layout_descriptor(
            observation_layout(config.n_buyers, config.n_sellers, mode, config.observe_time)
        )
        info = {
            "epoch": self.runner.k,
            "episode_epochs": config.epochs,
            "layout": layout,
            "action_space": action_space_descriptor(config)[mode],
        }
        return protocol.state(obs, None, False, info)

    def _step(self, message: dict[str, Any]) -> dict[str, Any]:
        if self.runner is None:
            raise protocol.ProtocolError("order", "step before reset")
        if self.done:
            raise protocol.ProtocolError("order", "step after done; reset to start a new episode")
        if "action" not in message:
            raise protocol.ProtocolError("parse", "step needs an action")
        if self.runner.mode == FEE_SETTING:
            action = decode_fee_action(message["action"], self.runner.config)
        else:
            action = decode_matching_action(message["action"])
        obs, rew, done, info = self.runner.step(action)
        self.done = done
        return protocol.state(obs, rew, done, info)


def serve_stream(session: Session, rfile: TextIO, wfile: TextIO) -> None:
    """Run one session over line-delimited streams until close or EOF."""
    for line in rfile:
        line = line.strip()
        if not line:
            continue
        try:
            message = protocol.parse(line)
        except protocol.ProtocolError as exc:
            response: dict[str, Any] | None = protocol.error(exc.code, exc.detail)
        else:
            response = session.handle(message)
        if response is None:
            break
        wfile.write(protocol.encode(response) + "\n")
        wfile.flush()


class _TCPHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:  # pragma: no cover - exercised via tests over sockets
        session = Session(self.server.config_dir)  # type: ignore[attr-defined]
        rfile = self.rfile
        wfile = self.wfile
        for raw in rfile:
            line = raw.decode("utf-8").strip()
            if not line:
                continue
            try:
                message = protocol.parse(line)
            except protocol.ProtocolError as exc:
                response: dict[str, Any] | None = protocol.error(exc.code, exc.detail)
            else:
                response = session.handle(message)
            if response is None:
                break
            wfile.write((protocol.encode(response) + "\n").encode("utf-8"))
            wfile.flush()


class TCPEnvServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], config_dir: str | Path):
        super().__init__(address, _TCPHandler)
        self.config_dir = Path(config_dir)


def serve(transport: str, config_dir: str | Path, port: int = 0, host: str = "127.0.0.1"):
    """Serve sessions until shutdown.

    ``stdio`` serves exactly one session over stdin/stdout; ``tcp`` accepts
    concurrent connections, one session each.
    """
    if transport == "stdio":
        serve_stream(Session(config_dir), sys.stdin, sys.stdout)
        return None
    if transport == "tcp":
        server = TCPEnvServer((host, port), config_dir)
        bound = server.server_address[1]
        print(f"platsim env server listening on {host}:{bound}", file=sys.stderr, flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:  # pragma: no cover
            pass
        finally:
            server.server_close()
        return None
    raise ValueError(f"unknown transport {transport!r}")


class ProtocolClient:
    """Minimal in-process client for tests and tooling."""

    def __init__(self, rfile, wfile):
        self.rfile = rfile
        self.wfile = wfile

    @staticmethod
    def connect_tcp(host: str, port: int) -> "ProtocolClient":
        sock = socket.create_connection((host, port))
        rfile = sock.makefile("r", encoding="utf-8")
        wfile = sock.makefile("w", encoding="utf-8")
        client = ProtocolClient(rfile, wfile)
        client._sock = sock  # keep alive
        return client

    def request(self, message: dict[str, Any]) -> dict[str, Any]:
        self.wfile.write(protocol.encode(message) + "\n")
        self.wfile.flush()
        line = self.rfile.readline()
        if not line:
            raise ConnectionError("server closed the stream")
        return protocol.parse(line.strip())

    def send_only(self, message: dict[str, Any]) -> None:
        self.wfile.write(protocol.encode(message) + "\n")
        self.wfile.flush()


def start_tcp_server_thread(config_dir: str | Path, port: int = 0) -> tuple[TCPEnvServer, int, threading.Thread]:
    server = TCPEnvServer(("127.0.0.1", port), config_dir)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, server.server_address[1], thread
