import math

import numpy as np
import pytest

from platsim import protocol
from platsim.server import Session, decode_fee_action, decode_matching_action
from platsim.config import MarketConfig
from platsim.envs import ActionError


def test_encode_parse_simple_messages():
    for msg in (
        protocol.hello(),
        protocol.reset("default", 7, "matching"),
        protocol.step({"rule": 0, "threshold_tick": 3}),
        protocol.close(),
        protocol.error("order", "step before reset"),
    ):
        assert protocol.parse(protocol.encode(msg)) == msg


def test_floats_survive_round_trip_bitwise():
    values = [0.1, 1.0, -0.0, 2**-1074, 1.7976931348623157e308, math.pi, 1e-300, 3.0000000000000004]
    msg = protocol.state(values, -1.2345678901234567e-5, False, {"x": 0.30000000000000004})
    back = protocol.parse(protocol.encode(msg))
    for a, b in zip(values, back["observation"]):
        assert a == b and isinstance(b, float)
    assert back["reward"] == -1.2345678901234567e-5
    assert back["info"]["x"] == 0.30000000000000004


def test_nan_and_infinity_rejected():
    with pytest.raises(protocol.ProtocolError):
        protocol.encode(protocol.state([float("nan")], None, False, {}))
    with pytest.raises(protocol.ProtocolError):
        protocol.encode(protocol.state([float("inf")], None, False, {}))


def test_parse_rejects_malformed_lines():
    with pytest.raises(protocol.ProtocolError):
        protocol.parse("not json at all")
    with pytest.raises(protocol.ProtocolError):
        protocol.parse('["kindless"]')
    with pytest.raises(protocol.ProtocolError):
        protocol.parse('{"no_kind": 1}')


def _random_message(rng: np.random.Generator) -> dict:
    kind = rng.choice(["hello", "reset", "step", "close", "ready", "state", "error"])
    if kind == "hello":
        return protocol.hello()
    if kind == "reset":
        return protocol.reset(f"cfg{rng.integers(100)}", int(rng.integers(1 << 31)), "fee_setting")
    if kind == "step":
        return protocol.step(
            {"pb_tick": int(rng.integers(51)), "ps_tick": int(rng.integers(51)), "pr_tick": int(rng.integers(11))}
        )
    if kind == "close":
        return protocol.close()
    if kind == "ready":
        return protocol.ready({"fee_setting": {"length": int(rng.integers(500))}}, {"matching": {"threshold_ticks": 11}})
    if kind == "state":
        n = int(rng.integers(1, 40))
        obs = [float(x) for x in rng.normal(scale=10.0 ** rng.integers(-12, 12), size=n)]
        reward = None if rng.random() < 0.2 else float(rng.normal())
        return protocol.state(obs, reward, bool(rng.random() < 0.1), {"epoch": int(rng.integers(13))})
    return protocol.error("action", "tick out of range")


def test_generated_messages_round_trip():
    rng = np.random.default_rng(123)
    for _ in range(2000):
        msg = _random_message(rng)
        assert protocol.parse(protocol.encode(msg)) == msg


def test_decode_fee_action_bounds():
    cfg = MarketConfig()
    fees = decode_fee_action({"pb_tick": 6, "ps_tick": 10, "pr_tick": 1}, cfg)
    assert fees.buyer_subscription == pytest.approx(1.2)
    assert fees.seller_subscription == pytest.approx(2.0)
    assert fees.referral_rate == pytest.approx(0.1)
    with pytest.raises(ActionError):
        decode_fee_action({"pb_tick": 51, "ps_tick": 0, "pr_tick": 0}, cfg)
    with pytest.raises(ActionError):
        decode_fee_action({"pb_tick": 0}, cfg)
    with pytest.raises(ActionError):
        decode_fee_action([0, 0, 0], cfg)


def test_decode_matching_action_bounds():
    strategy = decode_matching_action({"rule": 1, "threshold_tick": 7})
    assert strategy.rule == "profit_driven"
    assert strategy.threshold == pytest.approx(0.7)
    with pytest.raises(ActionError):
        decode_matching_action({"rule": 2, "threshold_tick": 7})
    with pytest.raises(ActionError):
        decode_matching_action({"rule": 0, "threshold_tick": 11})


def test_session_contract(tmp_path):
    import json

    config = {"market": MarketConfig(n_buyers=3, n_sellers=3, epochs=2, steps_per_epoch=6,
                                     constant_friction=0.3).to_dict(),
              "fixed_fees": [0.4, 0.4, 0.1]}
    (tmp_path / "default.json").write_text(json.dumps(config))
    session = Session(tmp_path)

    out = session.handle(protocol.hello())
    assert out["kind"] == "ready" and out["protocol_version"] == 1
    assert out["observation_layout"]["fee_setting"]["length"] > 0

    out = session.handle(protocol.step({"pb_tick": 0, "ps_tick": 0, "pr_tick": 0}))
    assert out["kind"] == "error" and out["code"] == "order"

    out = session.handle(protocol.reset("default", 3, "matching"))
    assert out["kind"] == "state" and out["reward"] is None and out["done"] is False
    assert len(out["observation"]) == out["info"]["layout"]["length"]

    done = False
    steps = 0
    while not done:
        out = session.handle(protocol.step({"rule": 0, "threshold_tick": 10}))
        assert out["kind"] == "state"
        done = out["done"]
        steps += 1
    assert steps == 2

    out = session.handle(protocol.step({"rule": 0, "threshold_tick": 10}))
    assert out["kind"] == "error" and out["code"] == "order"

    out = session.handle(protocol.reset("missing", 3, "matching"))
    assert out["kind"] == "error" and out["code"] == "config"

    out = session.handle(protocol.reset("default", 3, "fee_setting"))
    assert out["kind"] == "state"
    out = session.handle(protocol.step({"pb_tick": 77, "ps_tick": 0, "pr_tick": 0}))
    assert out["kind"] == "error" and out["code"] == "action"

    assert session.handle(protocol.close()) is None


def test_session_reset_determinism(tmp_path):
    import json

    config = {"market": MarketConfig(n_buyers=3, n_sellers=3, epochs=2, steps_per_epoch=6,
                                     constant_friction=0.3).to_dict(),
              "fixed_fees": [0.4, 0.4, 0.1]}
    (tmp_path / "default.json").write_text(json.dumps(config))

    def run_once():
        session = Session(tmp_path)
        session.handle(protocol.reset("default", 9, "matching"))
        frames = []
        done = False
        while not done:
            out = session.handle(protocol.step({"rule": 1, "threshold_tick": 5}))
            frames.append(protocol.encode(out))
            done = out["done"]
        return frames

    assert run_once() == run_once()
