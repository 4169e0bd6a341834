"""Run configuration shared by the command-line entry points."""

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from .geometry import BevGridSpec, DepthBins
from .instances import DecodeParams
from .losses import LossWeights
from .util import FormatError, dataclass_from_dict, get_thread_count


@dataclass(frozen=True)
class GridConfig:  # noqa D101
    extent: float = 100.0
    resolution: float = 0.5


@dataclass(frozen=True)
class BinsConfig:  # noqa D101
    dmin: float = 2.0
    dmax: float = 50.0
    dsize: float = 1.0


@dataclass(frozen=True)
class DecodeConfig:  # noqa D101
    center_threshold: float = 0.1
    nms_window: int = 5
    match_distance: float = 2.5


_NESTED = {
    "grid": GridConfig,
    "bins": BinsConfig,
    "decode": DecodeConfig,
    "loss": LossWeights,
}


@dataclass(frozen=True)
class RunConfig:
    """
    Parameters of a command-line run.

    Built from a JSON file and/or command-line flags. Any key that is not a
    field (at the top level or inside ``grid``, ``bins``, ``decode`` and
    ``loss``) is rejected.
    """

    subcommand: Optional[str] = None
    input: Optional[str] = None
    output: Optional[str] = None
    seed: int = 0
    beta: float = 1.0
    threads: Optional[int] = None
    grid: GridConfig = field(default_factory=GridConfig)
    bins: BinsConfig = field(default_factory=BinsConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}.")
        if self.threads is not None and self.threads < 1:
            raise ValueError(f"threads must be at least 1, got {self.threads}.")
        # validate eagerly so bad values fail at load time
        self.grid_spec()
        self.depth_bins()
        self.decode_params()

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Build from a nested mapping; unknown keys raise ``ValueError``."""
        if not isinstance(data, dict):
            raise ValueError("The configuration must be a JSON object.")
        data = dict(data)
        for key, sub_cls in _NESTED.items():
            if key in data:
                data[key] = dataclass_from_dict(sub_cls, data[key], key)
        return dataclass_from_dict(cls, data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":  # noqa D102
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise FormatError(f"{path}: invalid JSON ({err}).")
        return cls.from_dict(data)

    def to_dict(self) -> dict:  # noqa D102
        return asdict(self)

    def with_overrides(self, **flags) -> "RunConfig":
        """
        Apply command-line flags; ``None`` means "not given".

        Nested fields are addressed as ``<section>_<name>``, e.g.
        ``grid_resolution`` or ``decode_nms_window``.
        """
        top, nested = {}, {key: {} for key in _NESTED}
        for name, value in flags.items():
            if value is None:
                continue
            section = name.split("_", 1)[0]
            if section in nested and name not in asdict(self):
                nested[section][name.split("_", 1)[1]] = value
            else:
                top[name] = value
        for section, values in nested.items():
            if values:
                current = asdict(getattr(self, section))
                top[section] = dataclass_from_dict(
                    _NESTED[section], dict(current, **values), section
                )
        unknown = set(top) - set(asdict(self))
        if unknown:
            raise ValueError(
                f"Unknown configuration key(s): {', '.join(sorted(unknown))}"
            )
        return replace(self, **top)

    def grid_spec(self) -> BevGridSpec:  # noqa D102
        return BevGridSpec(self.grid.extent, self.grid.extent, self.grid.resolution)

    def depth_bins(self) -> DepthBins:  # noqa D102
        return DepthBins(self.bins.dmin, self.bins.dmax, self.bins.dsize)

    def decode_params(self) -> DecodeParams:  # noqa D102
        return DecodeParams(
            self.decode.center_threshold,
            self.decode.nms_window,
            self.decode.match_distance,
        )

    def thread_count(self) -> int:
        """
        ``threads`` if set, else ``BEVKIT_THREADS``, else 1. When both are set
        ``BEVKIT_THREADS`` caps ``threads``.
        """
        cap = get_thread_count(default=0)
        if self.threads is None:
            return cap or 1
        return min(self.threads, cap) if cap else self.threads
