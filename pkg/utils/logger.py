from typing import Callable, Optional

from tudelft_utilities_logging.ReportToLogger import ReportToLogger


class NodeLogger:
    """Prefixes every line with the virtual time and the node it concerns."""

    def __init__(self, base_logger: ReportToLogger, node_label: str, clock: Callable[[], int]):
        self.base_logger = base_logger
        self.node_label = node_label
        self.clock = clock

    def log(self, level: int, msg: str, thrown: Optional[BaseException] = None) -> None:
        self.base_logger.log(level, f"t={self.clock() / 1000:.3f}ms {self.node_label} - {msg}", thrown)


def node_logger(node_label: str, clock: Callable[[], int]) -> NodeLogger:
    return NodeLogger(ReportToLogger("poi.node"), node_label, clock)
