import argparse
import json
import sys
from pathlib import Path

from protocol.chain import HEADER_SIZE, Block, BlockFormatError, merkle_root
from protocol.crypto import ED25519, NodeId, hash32
from protocol.poi import PoIProof, ProofFormatError, explain_poi
from simnet.config import ConfigError, load_scenario
from simnet.metrics import reference_chain
from utils.plot_trace import plot_trace
from utils.runners import run_simulation, write_outputs

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ERROR = 2


def cmd_run(args) -> int:
    overrides = {
        "seed": args.seed,
        "n": args.n,
        "com_mean_ms": args.com,
        "difficulty_mean": args.difficulty_mean,
        "max_blocks": args.blocks,
    }
    try:
        config = load_scenario(Path(args.scenario), overrides)
    except ConfigError as exc:
        print(f"config error: {exc}")
        return EXIT_ERROR
    except OSError as exc:
        print(f"cannot read scenario: {exc}")
        return EXIT_ERROR

    out_dir = Path(args.out) if args.out else Path("results", f"{Path(args.scenario).stem}-seed{config.seed}")
    result = run_simulation(config)
    write_outputs(result, out_dir)
    if args.plot:
        chain = reference_chain([node.chain for node in result.nodes.values()])
        plot_trace(result.metrics.blocks, str(out_dir.joinpath("trace_plot.html")),
                   [block_id.hex() for block_id in chain.path()])

    summary = result.summary
    print(f"height {summary['height']}, {summary['blocks_produced']} blocks produced, "
          f"mean interval {summary['mean_block_interval_ms']} ms, {summary['stuck_tours']} stuck tours")
    print(f"outputs written to {out_dir}")
    return EXIT_OK


def _read_roster(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return tuple(NodeId(bytes.fromhex(key)) for key in json.load(f))


def cmd_verify_proof(args) -> int:
    try:
        roster = _read_roster(args.roster)
        if args.block:
            block = Block.deserialize(Path(args.block).read_bytes())
            proof, producer = block.proof, block.producer
            d, m, difficulty = block.prev_hash, block.header.merkle_root, block.header.difficulty
        else:
            if None in (args.proof, args.producer, args.d, args.m, args.difficulty):
                print("error: --proof needs --producer, --d, --m and --difficulty")
                return EXIT_ERROR
            proof = PoIProof.deserialize(Path(args.proof).read_bytes())
            producer = NodeId(bytes.fromhex(args.producer))
            d, m, difficulty = bytes.fromhex(args.d), bytes.fromhex(args.m), args.difficulty
    except (OSError, ValueError) as exc:
        # ProofFormatError and BlockFormatError are ValueErrors
        print(f"error: {exc}")
        return EXIT_ERROR

    if producer is None:
        print("invalid: genesis carries no proof")
        return EXIT_INVALID
    verdict = explain_poi(proof, producer, d, m, difficulty, roster, ED25519)
    if verdict.valid:
        print(f"valid, L={verdict.tour_length}")
        return EXIT_OK
    if verdict.failed_index is None:
        print(f"invalid: {verdict.reason}")
    else:
        print(f"invalid at index {verdict.failed_index}: {verdict.reason}")
    return EXIT_INVALID


def cmd_inspect_block(args) -> int:
    try:
        data = Path(args.block).read_bytes()
        if len(data) < HEADER_SIZE:
            raise BlockFormatError(f"block file has {len(data)} bytes, a header alone is {HEADER_SIZE}")
        block = Block.deserialize(data)
    except (OSError, BlockFormatError, ProofFormatError) as exc:
        print(f"error: {exc}")
        return EXIT_ERROR

    header = block.header
    print(f"block id     {block.block_id.hex()}")
    print(f"version      {header.version}")
    print(f"time         {header.time}")
    print(f"difficulty   {header.difficulty}")
    print(f"extra        {header.extra}")
    print(f"prev hash    {header.prev_hash.hex()}")
    print(f"merkle root  {header.merkle_root.hex()}")
    print(f"proof hash   {header.proof_hash.hex()}")
    print(f"producer     {block.producer.pubkey.hex() if block.producer else '-'}")
    print(f"transactions {len(block.transactions)}")
    print(f"proof        {len(block.proof)} signatures (L={block.proof.tour_length})")
    print(f"round trip   {'ok' if block.serialize() == data else 'MISMATCH'}")

    if not args.roster:
        return EXIT_OK
    try:
        roster = _read_roster(args.roster)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}")
        return EXIT_ERROR
    checks = {
        "merkle root": header.merkle_root == merkle_root(block.transactions),
        "proof hash": header.proof_hash == hash32(block.proof.serialize()),
    }
    if block.producer is not None:
        verdict = explain_poi(block.proof, block.producer, block.prev_hash, header.merkle_root,
                              header.difficulty, roster, ED25519)
        checks["proof"] = verdict.valid
        if not verdict.valid:
            print(f"proof check failed: {verdict.reason} (index {verdict.failed_index})")
    for name, ok in checks.items():
        print(f"check {name:<12} {'ok' if ok else 'FAILED'}")
    return EXIT_OK if all(checks.values()) else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Proof-of-Interaction blockchain simulator")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="run one scenario")
    run_parser.add_argument("scenario", help="scenario JSON file")
    run_parser.add_argument("--seed", type=int)
    run_parser.add_argument("--n", type=int)
    run_parser.add_argument("--com", type=float, help="mean latency in virtual ms")
    run_parser.add_argument("--difficulty-mean", type=int)
    run_parser.add_argument("--blocks", type=int, help="stop at this height")
    run_parser.add_argument("--out", help="output directory")
    run_parser.add_argument("--plot", action="store_true", help="also write an HTML chain trace")
    run_parser.set_defaults(func=cmd_run)

    verify_parser = commands.add_parser("verify-proof", help="check a proof of interaction")
    verify_parser.add_argument("--roster", required=True, help="roster JSON (list of hex public keys)")
    verify_parser.add_argument("--block", help="take proof, producer, d, m and difficulty from a block file")
    verify_parser.add_argument("--proof", help="serialized proof file")
    verify_parser.add_argument("--producer", help="initiator public key (hex)")
    verify_parser.add_argument("--d", help="dependency (hex)")
    verify_parser.add_argument("--m", help="message (hex)")
    verify_parser.add_argument("--difficulty", type=int)
    verify_parser.set_defaults(func=cmd_verify_proof)

    inspect_parser = commands.add_parser("inspect-block", help="dump a block file")
    inspect_parser.add_argument("block")
    inspect_parser.add_argument("--roster", help="also validate against this roster")
    inspect_parser.set_defaults(func=cmd_inspect_block)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
