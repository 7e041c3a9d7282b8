"""Model hyperparameters and validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64  # point feature width
    enc_ratios: tuple = (0.3, 0.3)  # fraction of points kept as centroids per level
    enc_radii: tuple = (0.08, 0.25)  # meters
    enc_k: int = 16
    global_context: bool = True  # max-pooled scene feature at the coarsest encoder level
    pe_freqs: int = 6  # F, per axis
    d_lang: int = 32
    d_cond: int = 64
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    ff_ratio: int = 2
    K: int = 100
    beta_start: float = 1e-3
    beta_end: float = 0.2
    snr_gamma: float = 5.0
    m: int = 3
    n_scene: int = 256  # scene points fed to the encoder
    flow_scale: float = 0.02  # meters per unit of the diffusion variable
    fusion: str = "late"

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enc_ratios"] = list(self.enc_ratios)
        d["enc_radii"] = list(self.enc_radii)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("enc_ratios", "enc_radii"):
            if key in d:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def min_tokens(self) -> int:
        """Smallest token count for which every level keeps >= 3 centroids."""
        n = 3
        for r in reversed(self.enc_ratios):
            n = int(-(-n // r)) if r < 1 else n
        return max(n, 4)


def validate(c: ModelConfig) -> None:
    if c.d_model % c.heads:
        raise ConfigError(f"d_model={c.d_model} not divisible by heads={c.heads}")
    if c.K < 1:
        raise ConfigError("K must be >= 1")
    if not (0.0 < c.beta_start <= c.beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {c.beta_start}, {c.beta_end}")
    if c.K > 1 and c.beta_start == c.beta_end:
        raise ConfigError("beta_start must be < beta_end when K > 1")
    if len(c.enc_ratios) != len(c.enc_radii):
        raise ConfigError("enc_ratios and enc_radii need one entry per level")
    if any(not (0 < r <= 1) for r in c.enc_ratios) or any(r <= 0 for r in c.enc_radii):
        raise ConfigError("encoder ratios must be in (0, 1] and radii positive")
    if c.fusion not in ("early", "late"):
        raise ConfigError(f"fusion must be 'early' or 'late', got {c.fusion!r}")
    if c.m < 1 or c.snr_gamma <= 0 or c.flow_scale <= 0:
        raise ConfigError("m >= 1, snr_gamma > 0 and flow_scale > 0 required")


TINY = dict(d=16, enc_ratios=(0.5,), enc_radii=(0.3,), enc_k=8, pe_freqs=2, d_lang=8, d_cond=16,
            d_model=16, layers=1, heads=2, ff_ratio=2, K=10, n_scene=32)


def tiny_config(**overrides) -> ModelConfig:
    """The small configuration used for finite-difference gradient checks."""
    kw = dict(TINY)
    kw.update(overrides)
    return ModelConfig(**kw)
