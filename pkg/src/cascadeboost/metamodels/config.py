from __future__ import annotations

from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class TrainConfig:
    """Training knobs shared by all families.

    Families ignore fields that do not apply to them (``cd_steps`` is RBM
    only, ``em_*`` GMM only, ``iw_samples``/``optimizer`` VAE only).
    """

    epochs: int = 30
    batch_size: int = 50
    learning_rate: float = 0.05
    seed: int = 0
    cd_steps: int = 1
    iw_samples: int = 16
    em_max_iters: int = 200
    em_tol: float = 1e-8
    optimizer: str = "sgd"
    variance_floor: float = 1e-6

    def __post_init__(self):
        for name in ("epochs", "batch_size", "cd_steps", "iw_samples", "em_max_iters"):
            if getattr(self, name) < 0 or (name != "epochs" and getattr(self, name) < 1):
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.em_tol <= 0:
            raise ValueError("em_tol must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in known:
                continue
            default = getattr(cls, key)
            kw[key] = type(default)(raw) if not isinstance(raw, type(default)) else raw
        return cls(**kw)
