"""Run configuration: one validated object drives every pipeline stage.

Every trained checkpoint embeds the config hash; loading a checkpoint
under a different config raises. The hash covers the semantic fields
only, never filesystem paths.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .shapegen import part_names


@dataclass
class RunConfig:
    category: str = "chair"
    template_n: int = 4
    dataset_n: int = 6
    dataset_m: int = 3
    image_size: int = 64
    z: int = 8
    d: int = 64
    seed: int = 1234

    # loss weights; lambda_w is shared between inversion and backward training
    lambda_w: float = 0.01
    lambda2: float = 0.1
    lambda3: float = 1.0
    lambda4: float = 1.0
    lambda_tps: float = 0.0
    beta: float = 1e-3

    # network widths
    mf_hidden: int = 128
    mb_hidden: int = 128
    mv_hidden: int = 96
    fr_hidden: int = 128

    # stage budgets
    partvae_epochs: int = 1500
    generator_epochs: int = 50
    forward1_epochs: int = 150
    forward2_epochs: int = 60
    backward_epochs: int = 60
    joint_epochs: int = 30
    view_epochs: int = 60
    trajectory_epochs: int = 300
    shape_finetune_steps: int = 120

    # optimizer settings
    generator_lr: float = 1e-3
    forward1_lr: float = 1e-3
    forward2_lr: float = 2e-4
    backward_lr: float = 1e-3
    joint_lr: float = 2e-4
    view_lr: float = 1e-3
    trajectory_lr: float = 1e-3
    invert_lr: float = 0.05
    batch_size: int = 64

    # inversion budgets
    invert_steps: int = 300
    dataset_invert_steps: int = 30
    traj_invert_steps: int = 30
    service_invert_steps: int = 60

    # canonical resize operation per part (axis scale factors, y is up)
    resize_ops: dict = field(default_factory=lambda: {
        "back": (1.0, 1.4, 1.0),
        "seat": (1.3, 1.0, 1.3),
        "legs": (1.0, 1.3, 1.0),
    })
    trajectory_weights: tuple = (-0.5, 0.5, 1.0)

    def __post_init__(self):
        self.validate()

    @property
    def n_c(self) -> int:
        return len(part_names(self.category))

    @property
    def parts(self) -> list[str]:
        return part_names(self.category)

    def validate(self) -> None:
        if self.template_n < 1:
            raise ValueError("template_n must be >= 1")
        if self.dataset_n < 2:
            raise ValueError("dataset_n must be >= 2")
        if self.dataset_m > self.n_c:
            raise ValueError("dataset_m cannot exceed the category part count")
        if self.image_size % 4:
            raise ValueError("image_size must be divisible by 4")
        if self.z < 1 or self.d < 1:
            raise ValueError("latent dimensions must be positive")
        for name in ("lambda_w", "lambda2", "lambda3", "lambda4", "lambda_tps", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        unknown = set(self.resize_ops) - set(self.parts)
        if unknown:
            raise ValueError(f"resize_ops for unknown parts: {sorted(unknown)}")
        for part, factors in self.resize_ops.items():
            if len(factors) != 3 or any(f <= 0 for f in factors):
                raise ValueError(f"resize_ops[{part}] must be 3 positive factors")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resize_ops"] = {k: list(v) for k, v in self.resize_ops.items()}
        d["trajectory_weights"] = list(self.trajectory_weights)
        return d

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @staticmethod
    def load(path) -> "RunConfig":
        raw = json.loads(Path(path).read_text())
        return RunConfig.from_dict(raw)

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        known = {f for f in RunConfig.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "resize_ops" in raw:
            raw = dict(raw)
            raw["resize_ops"] = {k: tuple(v) for k, v in raw["resize_ops"].items()}
        if "trajectory_weights" in raw:
            raw["trajectory_weights"] = tuple(raw["trajectory_weights"])
        return RunConfig(**raw)


def micro_config(seed: int = 99) -> RunConfig:
    """Tiny end-to-end profile for pipeline determinism and plumbing tests."""
    return RunConfig(
        category="chair", template_n=4, dataset_n=2, dataset_m=2,
        image_size=32, z=4, d=16, seed=seed,
        partvae_epochs=60, generator_epochs=4, forward1_epochs=8,
        forward2_epochs=4, backward_epochs=4, joint_epochs=3, view_epochs=6,
        trajectory_epochs=20, shape_finetune_steps=10,
        dataset_invert_steps=5, traj_invert_steps=5, invert_steps=20,
        service_invert_steps=5,
        resize_ops={"back": (1.0, 1.4, 1.0)},
    )
