import json
from pathlib import Path

import pytest

from protocol.chain import ChainStore
from simnet.analysis import expected_block_interval, fit_message_rate
from simnet.config import AdversaryConfig, ConfigError, CrashFault, SimConfig, from_dict, load_scenario
from simnet.simulator import Simulator, run

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def fast(**kwargs) -> SimConfig:
    values = dict(signer="transparent", latency_model="fixed", com_mean_ms=10)
    values.update(kwargs)
    return SimConfig(**values)


def replay_main_chain(result, node_id):
    """Validate and insert a node's head chain block by block into a fresh store."""
    node = result.nodes[node_id]
    replay = ChainStore(node.chain.params)
    for block_id in node.chain.path()[1:]:
        block = node.chain.get(block_id)
        assert replay.validate_block(block, node.scheme)
        replay.insert_block(block)
    return replay


# --- config ----------------------------------------------------------------

def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as err:
        from_dict({"n": 5, "bogus": 1})
    assert err.value.key == "bogus"
    with pytest.raises(ConfigError) as err:
        from_dict({"adversary": {"strategy": "selfish", "colour": "red"}})
    assert err.value.key == "adversary.colour"


def test_range_checks():
    with pytest.raises(ConfigError) as err:
        SimConfig(com_mean_ms=20, delta_max_ms=10).validate()
    assert err.value.key == "delta_max_ms"
    with pytest.raises(ConfigError):
        SimConfig(n=1).validate()
    with pytest.raises(ConfigError) as err:
        SimConfig(n=4, faults=(CrashFault(node=4, crash_at_ms=0),)).validate()
    assert err.value.key == "faults.node"
    with pytest.raises(ConfigError) as err:
        SimConfig(adversary=AdversaryConfig("bribery")).validate()
    assert err.value.key == "adversary.strategy"


def test_derived_difficulty():
    # k = ceil(100 / 20) = 5 hops, mean = ceil(5 * 11 / 2)
    assert SimConfig(n=10).initial_difficulty == 28
    assert SimConfig(n=10, difficulty_mean=3).initial_difficulty == 3


def test_scenario_overrides(tmp_path):
    config = load_scenario(SCENARIOS / "baseline.json", {"n": 6, "seed": None})
    assert config.n == 6
    assert config.seed == 0
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError) as err:
        load_scenario(broken)
    assert err.value.key == "scenario"


def test_every_shipped_scenario_loads():
    for path in sorted(SCENARIOS.glob("*.json")):
        config = load_scenario(path)
        assert from_dict(config.to_dict()) == config


# --- runs ------------------------------------------------------------------

def test_same_config_same_run():
    config = SimConfig(n=2, seed=5, difficulty_mean=1, latency_model="fixed", max_blocks=20)
    first, second = run(config), run(config)
    assert json.dumps(first.metrics.records, sort_keys=True) == json.dumps(second.metrics.records, sort_keys=True)
    assert first.summary == second.summary
    assert first.summary["height"] >= 20


def test_small_network_chains_are_valid():
    result = run(SimConfig(n=2, seed=5, difficulty_mean=1, latency_model="fixed", max_blocks=20))
    for node_id in result.roster:
        replay = replay_main_chain(result, node_id)
        assert replay.head == result.nodes[node_id].chain.head
    assert all(count > 0 for count in result.summary["signatures"].values())


def test_block_interval_matches_shortest_tour():
    config = fast(n=10, seed=1, difficulty_mean=27, retarget_period=100_000, max_blocks=300,
                  max_time_ms=1_000_000)
    result = run(config)
    assert result.summary["height"] >= 300
    expected = expected_block_interval(27, 10, 10)
    assert result.summary["mean_block_interval_ms"] == pytest.approx(expected, rel=0.15)


@pytest.mark.parametrize("initial", [5, 200])
def test_difficulty_settles_from_measured_intervals(initial):
    config = fast(n=10, seed=3, difficulty_mean=initial, retarget_period=20, target_block_interval_ms=100,
                  max_blocks=240, max_time_ms=1_000_000)
    result = run(config)
    replay = replay_main_chain(result, result.roster[0])
    headers = [replay.get(block_id).header for block_id in replay.path()]
    assert len(headers) > 200
    # a tour of mean 25 over 10 nodes at 10 ms per leg lands near 100 ms per block
    assert 18 <= headers[-1].difficulty <= 34
    tail = headers[-101:]
    assert (tail[-1].time - tail[0].time) / 100 == pytest.approx(100, rel=0.3)


def test_no_blocks_while_everyone_is_down():
    faults = tuple(CrashFault(node=i, crash_at_ms=0, reboot_at_ms=500) for i in range(4))
    result = run(fast(n=4, difficulty_mean=2, faults=faults, max_blocks=5, max_time_ms=5000))
    assert result.metrics.blocks
    assert all(block["produced_at_ms"] >= 500 for block in result.metrics.blocks)
    assert result.summary["events"]["reboot"] == 4


def test_tours_through_crashed_nodes_get_stuck():
    config = load_scenario(SCENARIOS / "crash_half.json", {"signer": "transparent", "max_time_ms": 3000})
    summary = run(config).summary
    assert summary["stuck_tours"] > 0
    assert summary["unstuck_fraction"] < 1
    assert summary["dropped_deliveries"] > 0


def test_latency_never_exceeds_delta():
    simulator = Simulator(SimConfig(com_mean_ms=10, delta_max_ms=12, com_jitter=1.0, signer="transparent"))
    samples = [simulator.latency_us() for _ in range(5000)]
    assert max(samples) <= 12_000
    assert min(samples) >= 1


def test_message_rate_grows_linearly():
    ns = (10, 20, 40)
    rates = []
    for n in ns:
        summary = run(fast(n=n, seed=2, max_blocks=10 ** 6, max_time_ms=1000)).summary
        assert 0.5 <= summary["messages_per_node_per_com"] <= summary["services_plus_one"]
        rates.append(summary["interaction_messages"] / summary["end_time_ms"])
    fit = fit_message_rate(ns, rates)
    assert fit["r2"] >= 0.95
    assert fit["slope"] > 0


def test_honest_nodes_share_a_prefix():
    result = run(SimConfig(n=10, seed=4, signer="transparent", max_blocks=50))
    summary = result.summary
    assert summary["height"] - 3 <= summary["common_prefix_height"] <= summary["height"]
    assert summary["divergence"] >= 0
    assert summary["fraud_claims_detected"] == 0
    replay_main_chain(result, result.roster[0])


def test_snapshots_are_emitted():
    result = run(fast(n=4, difficulty_mean=2, max_blocks=25, snapshot_every_blocks=5))
    snapshots = [r for r in result.metrics.records if r["type"] == "snapshot"]
    assert len(snapshots) >= 5
    assert snapshots[-1]["max_height"] >= 25
