import json
import multiprocessing
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import pandas as pd

from protocol.chain import ChainStore
from simnet.config import SimConfig
from simnet.simulator import SimResult, run
from simnet.metrics import reference_chain
from utils.ask_proceed import ask_proceed


def run_simulation(config: SimConfig) -> SimResult:
    return run(config)


def write_outputs(result: SimResult, out_dir: Path) -> Path:
    """Write metrics, summary, replay config, roster and the reference chain's blocks."""
    out_dir = Path(out_dir)
    blocks_dir = out_dir.joinpath("blocks")
    proofs_dir = out_dir.joinpath("proofs")
    for directory in (out_dir, blocks_dir, proofs_dir):
        if not directory.exists():
            directory.mkdir(parents=True)

    result.metrics.write_records(out_dir.joinpath("metrics.jsonl"))
    with open(out_dir.joinpath("summary.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(result.summary, indent=2, sort_keys=True))
    with open(out_dir.joinpath("config.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(result.config.to_dict(), indent=2))
    with open(out_dir.joinpath("roster.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps([u.pubkey.hex() for u in result.roster], indent=2))

    chain = reference_chain([node.chain for node in result.nodes.values()])
    with open(out_dir.joinpath("blocks", "index.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(chain_index(chain), indent=2))
    for height, block_id in enumerate(chain.path()):
        block = chain.get(block_id)
        blocks_dir.joinpath(f"{height:06d}.block").write_bytes(block.serialize())
        if height:
            proofs_dir.joinpath(f"{height:06d}.proof").write_bytes(block.proof.serialize())
    return out_dir


def chain_index(chain: ChainStore) -> List[Dict]:
    """Per block of the head chain: what verify-proof needs besides the proof itself."""
    index = []
    for height, block_id in enumerate(chain.path()):
        block = chain.get(block_id)
        index.append({
            "height": height,
            "block_id": block_id.hex(),
            "producer": block.producer.pubkey.hex() if block.producer else None,
            "d": block.prev_hash.hex(),
            "m": block.header.merkle_root.hex(),
            "difficulty": block.header.difficulty,
            "tour_length": block.proof.tour_length if height else 0,
        })
    return index


def _run_summary(config: SimConfig) -> Tuple[dict, dict]:
    result = run(config)
    return config.to_dict(), result.summary


def run_sweep(configs: Sequence[SimConfig], processes: int = None, assume_yes: bool = False) -> List[Tuple[dict, dict]]:
    """Run independent configs in parallel; each run stays in its own process."""
    if len(configs) > 100:
        message = f"WARNING: this would run {len(configs)} simulations. Proceed?"
        if not ask_proceed(message, assume_yes=assume_yes):
            print("Exiting script")
            return []
    with multiprocessing.Pool(processes) as pool:
        return pool.map(_run_summary, configs)


SWEEP_COLUMNS = [
    "n",
    "seed",
    "adversary",
    "height",
    "mean_block_interval_ms",
    "interaction_messages",
    "messages_per_node_per_com",
    "services_plus_one",
    "forks",
    "reorgs",
    "max_reorg_depth",
    "stuck_tours",
    "unstuck_fraction",
    "fraud_claims_detected",
    "fraud_claims_on_chain",
    "end_time_ms",
]


def process_sweep_results(results: Sequence[Tuple[dict, dict]]) -> pd.DataFrame:
    rows = []
    for config, summary in results:
        row = {key: summary.get(key) for key in SWEEP_COLUMNS if key in summary}
        row["n"] = config["n"]
        row["seed"] = config["seed"]
        row["adversary"] = config["adversary"]["strategy"] if config["adversary"] else "none"
        row["interaction_rate_per_ms"] = (
            summary["interaction_messages"] / summary["end_time_ms"] if summary["end_time_ms"] else 0.0
        )
        rows.append(row)

    frame = pd.DataFrame(rows)
    if frame.empty:
        return frame
    frame = frame.fillna(0)
    frame.sort_values(["n", "seed"], inplace=True)
    return frame[SWEEP_COLUMNS + ["interaction_rate_per_ms"]].reset_index(drop=True)


def summarize_sweep(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean of every numeric column per network size."""
    numeric = frame.drop(columns=["seed", "adversary"])
    return numeric.groupby("n").mean()
