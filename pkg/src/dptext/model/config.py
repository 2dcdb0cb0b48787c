from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..autodiff import ConfigError

QUERY_MODES = ("box_baseline", "explicit_point")
EFSA_MODES = ("fsa", "efsa")


@dataclass(frozen=True)
class ModelConfig:
    """Detector hyperparameters; defaults are the desk-scale setting.

    The full-size setting is d_model 256, 6 encoder and 6 decoder layers,
    K = 100 queries and N = 16 control points.
    """

    d_model: int = 64
    n_heads: int = 8
    n_deform_points: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 3
    n_queries: int = 20
    n_points: int = 8
    efsa_conv_layers: int = 1
    efsa_neighborhood: int = 4
    query_mode: str = "explicit_point"
    efsa_mode: str = "efsa"
    d_ffn: int = 128
    image_size: int = 64
    stem_channels: tuple[int, int] = (16, 32)
    init_box_size: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 4 or self.n_points % 2:
            raise ConfigError(f"n_points must be even and >= 4, got {self.n_points}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_model % 4:
            raise ConfigError(f"d_model {self.d_model} must be divisible by 4 for the sine encoding")
        if self.query_mode not in QUERY_MODES:
            raise ConfigError(f"query_mode must be one of {QUERY_MODES}, got {self.query_mode!r}")
        if self.efsa_mode not in EFSA_MODES:
            raise ConfigError(f"efsa_mode must be one of {EFSA_MODES}, got {self.efsa_mode!r}")
        if self.efsa_neighborhood % 2:
            raise ConfigError(f"efsa_neighborhood must be even, got {self.efsa_neighborhood}")
        if self.kernel_size > self.n_points:
            raise ConfigError(f"circular kernel {self.kernel_size} exceeds n_points {self.n_points}")
        if self.n_queries > self.feature_size ** 2:
            raise ConfigError(f"n_queries {self.n_queries} exceeds the {self.feature_size ** 2} memory positions")
        object.__setattr__(self, "stem_channels", tuple(self.stem_channels))

    @property
    def kernel_size(self) -> int:
        # a neighbourhood of 4 means two neighbours per side
        return self.efsa_neighborhood + 1

    @property
    def feature_size(self) -> int:
        # three stride-2 convolutions
        size = self.image_size
        for _ in range(3):
            size = (size + 1) // 2
        return size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stem_channels"] = list(self.stem_channels)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)
