"""Training loop: Adam + cross-entropy on the synthetic dataset, with a
held-out accuracy report and full determinism for a fixed seed."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .data import make_dataset
from .model import ModelSpec, ViTClassifier


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        self.final_loss = loss
        super().__init__(f"loss became non-finite at epoch {epoch}: {loss}")


@dataclass
class TrainSpec:
    arch: str = "base"
    image_side: int = 16
    patch_size: int = 2
    n_negative: int = 1000
    n_positive: int = 1000
    delta_range: tuple[float, float] = (1.0, 4.0)
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    holdout_per_class: int = 200
    seed: int = 0

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainSpec":
        raw = json.loads(Path(path).read_text())
        raw.pop("optimizer", None)
        raw["delta_range"] = tuple(raw.get("delta_range", (1.0, 4.0)))
        raw["learning_rate"] = raw.pop("learning_rate", 1e-3)
        return cls(**raw)


@dataclass
class TrainReport:
    holdout_accuracy: float
    final_loss: float
    loss_curve: list = field(default_factory=list)
    spec: dict = field(default_factory=dict)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(
                {
                    "accuracy": self.holdout_accuracy,
                    "final_loss": self.final_loss,
                    "loss_curve": self.loss_curve,
                    "spec": self.spec,
                },
                indent=2,
            )
            + "\n"
        )


def _deterministic(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(max(torch.get_num_threads(), 1))


def train(spec: TrainSpec) -> tuple[ViTClassifier, TrainReport]:
    _deterministic(spec.seed)
    model_spec = ModelSpec.from_arch(spec.arch, spec.image_side, spec.patch_size)
    model = ViTClassifier(model_spec)

    images, labels = make_dataset(
        spec.n_negative,
        spec.n_positive,
        spec.image_side,
        spec.delta_range,
        spec.seed,
    )
    holdout_images, holdout_labels = make_dataset(
        spec.holdout_per_class,
        spec.holdout_per_class,
        spec.image_side,
        spec.delta_range,
        spec.seed + 1,
    )

    opt = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)
    n = len(labels)
    curve = []
    loss_value = math.nan
    for epoch in range(spec.epochs):
        perm = torch.randperm(n)
        epoch_loss = 0.0
        model.train()
        for i in range(0, n, spec.batch_size):
            idx = perm[i : i + spec.batch_size]
            logits, _ = model(images[idx])
            loss = F.cross_entropy(logits, labels[idx])
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                raise TrainingDiverged(epoch, loss_value)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss_value * len(idx)
        curve.append(epoch_loss / n)

    model.eval()
    with torch.no_grad():
        logits, _ = model(holdout_images)
        accuracy = float((logits.argmax(dim=-1) == holdout_labels).float().mean())

    report = TrainReport(
        holdout_accuracy=accuracy,
        final_loss=curve[-1] if curve else loss_value,
        loss_curve=curve,
        spec=spec.__dict__ | {"delta_range": list(spec.delta_range)},
    )
    return model, report
