import os
from pathlib import Path

import pytest
import torch

torch.set_num_threads(min(os.cpu_count() or 1, 2))

from vit_trainer.export import export
from vit_trainer.train import TrainSpec, train

SPEC_PATH = Path(__file__).resolve().parents[1] / "trainspec.json"


@pytest.fixture(scope="session")
def full_spec():
    return TrainSpec.from_json(SPEC_PATH)


@pytest.fixture(scope="session")
def trained(full_spec, tmp_path_factory):
    """The committed training recipe, run once per session; returns
    (model, report, vitw_path)."""
    model, report = train(full_spec)
    path = tmp_path_factory.mktemp("weights") / "trained_base.vitw"
    export(model, path)
    return model, report, path
