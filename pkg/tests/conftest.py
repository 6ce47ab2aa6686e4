import pytest

from patchda.data import DatasetConfig, generate
from patchda.harness.config import config_from_json

TINY_DATA = {"train_clips": 10, "val_clips": 4, "seed": 3}


def tiny_config(train=None, model=None):
    blob = {
        "data": dict(TINY_DATA),
        "model": {"feat_dim": 32, "relation_hidden": 16, **(model or {})},
        "train": {"epochs_local": 1, "epochs_adapt": 1, "batch_size": 5, "adapt_batch_size": 5, **(train or {})},
    }
    return config_from_json(blob)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("tiny"))
    return generate(DatasetConfig(**TINY_DATA), root)
