"""Experiment configuration: one JSON file with ``data``, ``model`` and ``train`` sections."""

import json
from dataclasses import asdict, dataclass, field, fields

from patchda.adaptation import LossWeights
from patchda.data import DatasetConfig, config_from_dict
from patchda.errors import InvalidConfigError
from patchda.streams import ModelConfig


@dataclass
class TrainConfig:
    # phase 1: local-branch learning rates; global encoders and the auxiliary
    # head share the focuser rate
    lr_glancer: float = 0.005
    lr_focuser: float = 0.01
    lr_policy: float = 1e-4
    lr_global: float = 0.01
    lr_aux: float = 0.01
    aux_local_weight: float = 1.0
    epochs_local: int = 30
    batch_size: int = 16
    # phase 2
    lr_adapt: float = 3e-3
    lr_decay_epochs: tuple = (10, 20)
    lr_decay_factor: float = 0.1
    epochs_adapt: int = 30
    adapt_batch_size: int = 16
    lambda_sd: float = 0.5
    lambda_rd: float = 0.5
    lambda_td: float = 0.5
    gamma: float = 0.01
    grl_warmup: bool = True
    # shared
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)
        self.validate()

    def validate(self):
        for name in ("lr_glancer", "lr_focuser", "lr_policy", "lr_global", "lr_aux", "lr_adapt"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be >= 0")
        if any(b <= a for a, b in zip(self.lr_decay_epochs, self.lr_decay_epochs[1:])):
            raise InvalidConfigError("lr_decay_epochs must be strictly increasing")
        if self.batch_size < 1 or self.adapt_batch_size < 1:
            raise InvalidConfigError("batch sizes must be >= 1")
        if self.epochs_local < 0 or self.epochs_adapt < 0:
            raise InvalidConfigError("epoch counts must be >= 0")
        for name in ("lambda_sd", "lambda_rd", "lambda_td", "gamma"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be >= 0")

    def loss_weights(self):
        return LossWeights(sd=self.lambda_sd, rd=self.lambda_rd, td=self.lambda_td, ae=self.gamma)

    def adapt_lr(self, epoch):
        """Phase-2 learning rate for 1-based ``epoch``: decayed after each milestone."""
        drops = sum(1 for m in self.lr_decay_epochs if epoch > m)
        return self.lr_adapt * self.lr_decay_factor ** drops


def _strict(cls, d, section):
    if not isinstance(d, dict):
        raise InvalidConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise InvalidConfigError(f"unknown {section} config keys: {sorted(unknown)}")
    return cls(**d)


# model fields that are dictated by the dataset
_DATA_LINKED = {
    "frame_size": "frame_size",
    "audio_dim": "audio_dim",
    "num_verbs": "num_verbs",
    "num_nouns": "num_nouns",
}


@dataclass
class ExperimentConfig:
    data: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        for model_key, data_key in _DATA_LINKED.items():
            if getattr(self.model, model_key) != getattr(self.data, data_key):
                raise InvalidConfigError(
                    f"model.{model_key}={getattr(self.model, model_key)} disagrees with data.{data_key}="
                    f"{getattr(self.data, data_key)}"
                )
        if self.model.num_segments > self.data.num_frames:
            raise InvalidConfigError("model.num_segments exceeds data.num_frames")

    def to_dict(self):
        return {"data": asdict(self.data), "model": asdict(self.model), "train": asdict(self.train)}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def config_from_json(blob):
    """Build an :class:`ExperimentConfig`; unknown keys are rejected.

    Model fields tied to the dataset (frame size, audio width, class counts)
    default to the dataset's values when omitted.
    """
    if not isinstance(blob, dict):
        raise InvalidConfigError("config must be a JSON object")
    unknown = set(blob) - {"data", "model", "train"}
    if unknown:
        raise InvalidConfigError(f"unknown config sections: {sorted(unknown)}")
    data = config_from_dict(blob.get("data", {})) if not isinstance(blob.get("data"), DatasetConfig) else blob["data"]
    model_d = dict(blob.get("model", {}))
    for model_key, data_key in _DATA_LINKED.items():
        model_d.setdefault(model_key, getattr(data, data_key))
    model_d.setdefault("num_segments", data.num_frames)
    model_d.setdefault("glance_frames", model_d["num_segments"])
    model = _strict(ModelConfig, model_d, "model")
    train = _strict(TrainConfig, blob.get("train", {}), "train")
    return ExperimentConfig(data, model, train)


def load_config(path):
    try:
        with open(path) as fh:
            blob = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: {exc}") from exc
    return config_from_json(blob)
