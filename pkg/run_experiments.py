import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from simnet.analysis import (
    approx_min_tour_length,
    crash_experiment,
    double_tour_trial,
    expected_min_tour_length,
    fit_message_rate,
    retarget_trajectory,
    sample_min_tour_length,
    sample_tour_lengths,
    shared_key_experiment,
)
from simnet.config import SimConfig
from utils.runners import process_sweep_results, run_sweep, summarize_sweep

# Multi-seed analyses. Each entry below is one experiment; the message-rate
# sweep runs full simulations in parallel, the others are protocol-level Monte
# Carlo runs that need no network.
message_rate_settings = {
    "ns": [10, 20, 40],
    "base": SimConfig(com_mean_ms=10, latency_model="fixed", max_blocks=30, signer="transparent"),
}

crash_settings = [
    {"n": 30, "crashed": 15},
    {"n": 10, "crashed": 2},
]

shared_key_settings = [
    {"n": 8, "colluders": 4, "difficulty": 3},
    {"n": 10, "colluders": 1, "difficulty": 100},
]

double_tour_settings = {"n": 40, "difficulty": 20, "tours": 2}

retarget_settings = {"initial_mean": 27, "com": 5, "n": 10, "period": 100, "target_interval": 100, "periods": 5}


def main():
    parser = argparse.ArgumentParser(description="multi-seed analyses")
    parser.add_argument("--seeds", type=int, default=200)
    parser.add_argument("--yes", action="store_true", help="do not ask before large sweeps")
    args = parser.parse_args()
    seeds = list(range(args.seeds))

    results_dir = Path("results", time.strftime('%Y%m%d-%H%M%S'))
    results_dir.mkdir(parents=True, exist_ok=True)
    report = {}

    # network message rate against n
    configs = [
        replace(message_rate_settings["base"], n=n, seed=seed)
        for n in message_rate_settings["ns"]
        for seed in seeds[:5]
    ]
    sweep = process_sweep_results(run_sweep(configs, assume_yes=args.yes))
    if not sweep.empty:
        sweep.to_csv(results_dir.joinpath("message_rate_sweep.csv"))
        per_n = summarize_sweep(sweep)
        per_n.to_csv(results_dir.joinpath("message_rate_summary.csv"))
        report["message_rate_fit"] = fit_message_rate(per_n.index.tolist(),
                                                      per_n["interaction_rate_per_ms"].tolist())

    # tour length statistics
    lengths = sample_tour_lengths(10, 10_000)
    minima = sample_min_tour_length(27, 10, 10_000)
    report["tour_lengths"] = {
        "mean_of_mean_10": float(lengths.mean()),
        "min_of_10_mean_27": float(minima.mean()),
        "exact_min": expected_min_tour_length(27, 10),
        "approx_min": approx_min_tour_length(27, 10),
    }

    report["crash"] = [
        {**setting, **crash_experiment(setting["n"], setting["crashed"], seeds)} for setting in crash_settings
    ]
    report["shared_keys"] = [
        {**setting, **shared_key_experiment(setting["n"], setting["colluders"], setting["difficulty"], seeds)}
        for setting in shared_key_settings
    ]

    trials = [double_tour_trial(seed, **double_tour_settings) for seed in seeds]
    report["double_tour"] = {
        **double_tour_settings,
        "detection_rate": float(np.mean([t["detected"] for t in trials])),
        "oracle_agreement": float(np.mean([t["detected"] == t["predicted"] for t in trials])),
        "claims_valid": all(t["claims_valid"] and t["stake_moved"] for t in trials),
    }

    report["retarget"] = {**retarget_settings, "means": retarget_trajectory(**retarget_settings)}

    with open(results_dir.joinpath("experiments.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
