"""Model configurations and the input/target ablation grid."""

from dataclasses import asdict, dataclass, replace
from typing import Iterable, List, Tuple

from mdpulse.errors import InvalidConfig, NoInputEnabled, NoTargetEnabled

ARCHITECTURES = ("attention", "plain")
TARGETS = ("fd", "sd")


@dataclass(frozen=True)
class ModelConfig:
    """
    Which derivative streams go in and come out, and how big the network is.

    Attributes:
        arch: "attention" (shared attention masks) or "plain"
        use_fd_input / use_sd_input: feed difference / difference-of-difference frames
        use_fd_target / use_sd_target: emit first / second derivative heads
        loss_kind: "mse" or "mae"
        target_weights: (w_fd, w_sd) for the summed multi-target loss
        filters: conv widths (first pair, second pair)
        gru_units: units per direction of the bidirectional layer
        dropout_rate: applied after every pooling layer in training
    """

    arch: str = "attention"
    use_fd_input: bool = True
    use_sd_input: bool = False
    use_fd_target: bool = True
    use_sd_target: bool = False
    loss_kind: str = "mse"
    target_weights: Tuple[float, float] = (1.0, 1.0)
    filters: Tuple[int, int] = (16, 32)
    gru_units: int = 32
    dropout_rate: float = 0.25

    def validate(self) -> None:
        if self.arch not in ARCHITECTURES:
            raise InvalidConfig(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if not (self.use_fd_input or self.use_sd_input):
            raise NoInputEnabled("enable at least one of FD / SD input frames")
        if not (self.use_fd_target or self.use_sd_target):
            raise NoTargetEnabled("enable at least one of FD / SD targets")
        if self.loss_kind not in ("mse", "mae"):
            raise InvalidConfig(f"loss_kind must be 'mse' or 'mae', got {self.loss_kind!r}")
        if len(self.target_weights) != 2 or min(self.target_weights) < 0:
            raise InvalidConfig(f"target_weights must be two non-negative numbers, got {self.target_weights}")
        if len(self.filters) != 2 or min(self.filters) < 1 or self.gru_units < 1:
            raise InvalidConfig("filters and gru_units must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise InvalidConfig(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def inputs(self) -> List[str]:
        return [k for k, on in (("fd", self.use_fd_input), ("sd", self.use_sd_input)) if on]

    @property
    def targets(self) -> List[str]:
        return [k for k, on in (("fd", self.use_fd_target), ("sd", self.use_sd_target)) if on]

    def weight(self, target: str) -> float:
        return float(self.target_weights[TARGETS.index(target)])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        values = dict(values)
        for key in ("target_weights", "filters"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)


# (fd_input, sd_input, fd_target, sd_target), in table order.
_GRID_ROWS = [
    (True, False, True, False),
    (True, False, True, True),
    (True, False, False, True),
    (True, True, True, False),
    (True, True, True, True),
    (True, True, False, True),
]
_SD_INPUT_ONLY_ROWS = [
    (False, True, True, False),
    (False, True, True, True),
    (False, True, False, True),
]


def ablation_grid(
    archs: Iterable[str] = ARCHITECTURES,
    include_sd_input_only: bool = False,
    base: ModelConfig = None,
) -> List[ModelConfig]:
    """
    Six input/target rows per architecture; the three SD-input-only rows
    are added for the attention architecture on request.
    """
    base = base or ModelConfig()
    grid = []
    for arch in archs:
        rows = list(_GRID_ROWS)
        if include_sd_input_only and arch == "attention":
            rows += _SD_INPUT_ONLY_ROWS
        for fd_in, sd_in, fd_out, sd_out in rows:
            cfg = replace(
                base,
                arch=arch,
                use_fd_input=fd_in,
                use_sd_input=sd_in,
                use_fd_target=fd_out,
                use_sd_target=sd_out,
            )
            cfg.validate()
            grid.append(cfg)
    return grid


def row_label(cfg: ModelConfig) -> str:
    flags = (cfg.use_fd_input, cfg.use_sd_input, cfg.use_fd_target, cfg.use_sd_target)
    if flags == (True, False, True, False):
        return "FD-Optimized"
    if flags == (True, True, False, True):
        return "SD-Optimized"
    return ""
