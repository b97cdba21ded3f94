import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from protocol.chain import difficulty_for_interval
from protocol.poi import MAX_DIFFICULTY

LATENCY_MODELS = ("lognormal", "fixed")
SIGNERS = ("ed25519", "transparent")
STRATEGIES = ("double_tour", "selfish", "shared_keys")


class ConfigError(ValueError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key


@dataclass(frozen=True)
class CrashFault:
    node: int
    crash_at_ms: float
    reboot_at_ms: Optional[float] = None


@dataclass(frozen=True)
class AdversaryConfig:
    strategy: str
    nodes: Tuple[int, ...] = (0,)
    tours: int = 2
    serve_requests: bool = True


@dataclass(frozen=True)
class SimConfig:
    """One simulation run. Times are virtual milliseconds; nodes are roster indices."""

    n: int = 10
    seed: int = 0
    com_mean_ms: float = 10
    com_jitter: float = 0.25
    latency_model: str = "lognormal"
    delta_max_ms: float = 100
    target_block_interval_ms: int = 100
    difficulty_mean: Optional[int] = None
    retarget_period: int = 100
    reward: int = 100
    stake: int = 1000
    max_blocks: int = 100
    max_time_ms: float = 60000
    processing_delay_ms: float = 0
    retry_factor: float = 4
    signer: str = "ed25519"
    stale_hints: bool = True
    max_block_txs: int = 16
    snapshot_every_blocks: int = 10
    faults: Tuple[CrashFault, ...] = field(default_factory=tuple)
    adversary: Optional[AdversaryConfig] = None

    @property
    def initial_difficulty(self) -> int:
        if self.difficulty_mean is not None:
            return self.difficulty_mean
        return difficulty_for_interval(self.target_block_interval_ms, self.com_mean_ms, self.n)

    def validate(self) -> "SimConfig":
        if self.n < 2:
            raise ConfigError("n", "at least 2 nodes are required")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed", "must fit in 64 bits")
        if self.com_mean_ms <= 0:
            raise ConfigError("com_mean_ms", "must be positive")
        if self.com_jitter < 0:
            raise ConfigError("com_jitter", "must not be negative")
        if self.com_mean_ms > self.delta_max_ms:
            raise ConfigError("delta_max_ms", "must be at least com_mean_ms")
        if self.latency_model not in LATENCY_MODELS:
            raise ConfigError("latency_model", f"expected one of {LATENCY_MODELS}")
        if self.signer not in SIGNERS:
            raise ConfigError("signer", f"expected one of {SIGNERS}")
        if self.difficulty_mean is not None and not 1 <= self.difficulty_mean <= MAX_DIFFICULTY:
            raise ConfigError("difficulty_mean", f"must be in [1, {MAX_DIFFICULTY}]")
        for key in ("target_block_interval_ms", "retarget_period", "max_blocks", "max_time_ms",
                    "retry_factor", "max_block_txs", "snapshot_every_blocks"):
            if getattr(self, key) <= 0:
                raise ConfigError(key, "must be positive")
        for key in ("reward", "stake", "processing_delay_ms"):
            if getattr(self, key) < 0:
                raise ConfigError(key, "must not be negative")
        for fault in self.faults:
            if not 0 <= fault.node < self.n:
                raise ConfigError("faults.node", f"node index {fault.node} outside roster")
            if fault.reboot_at_ms is not None and fault.reboot_at_ms <= fault.crash_at_ms:
                raise ConfigError("faults.reboot_at_ms", "must come after crash_at_ms")
        if self.adversary is not None:
            adversary = self.adversary
            if adversary.strategy not in STRATEGIES:
                raise ConfigError("adversary.strategy", f"expected one of {STRATEGIES}")
            if not adversary.nodes or any(not 0 <= i < self.n for i in adversary.nodes):
                raise ConfigError("adversary.nodes", "must list roster indices")
            if adversary.tours < 1:
                raise ConfigError("adversary.tours", "must be positive")
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["faults"] = [asdict(fault) for fault in self.faults]
        if self.adversary is not None:
            data["adversary"]["nodes"] = list(self.adversary.nodes)
        return data


def _check_keys(data: Dict[str, Any], cls, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or "scenario", "expected an object")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{prefix}{key}", "unknown key")


def from_dict(data: Dict[str, Any]) -> SimConfig:
    _check_keys(data, SimConfig)
    values = dict(data)
    faults: List[CrashFault] = []
    for entry in values.pop("faults", None) or []:
        _check_keys(entry, CrashFault, "faults.")
        if "node" not in entry or "crash_at_ms" not in entry:
            raise ConfigError("faults", "each fault needs node and crash_at_ms")
        faults.append(CrashFault(**entry))
    adversary = values.pop("adversary", None)
    if adversary is not None:
        _check_keys(adversary, AdversaryConfig, "adversary.")
        if "strategy" not in adversary:
            raise ConfigError("adversary.strategy", "missing")
        adversary = dict(adversary)
        adversary["nodes"] = tuple(adversary.get("nodes", (0,)))
        adversary = AdversaryConfig(**adversary)
    return SimConfig(**values, faults=tuple(faults), adversary=adversary).validate()


def load_scenario(path: Path, overrides: Optional[Dict[str, Any]] = None) -> SimConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError("scenario", f"{path} is not valid JSON ({exc.msg})") from exc
    if not isinstance(data, dict):
        raise ConfigError("scenario", "expected an object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return from_dict(data)
