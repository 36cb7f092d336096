"""Experiment configuration: one JSON document drives a whole run.

Configs are schema-validated (unknown keys rejected) and then resolved
against defaults; the fully resolved document is what commands echo into
their output directory, so a run is reproducible from that file alone.
"""

import copy
import json
from importlib import resources

import jsonschema

from .data import DatasetSpec
from .errors import ConfigError
from .optim import OptimizerConfig
from .trainer import TrainConfig

FGSM_DEFAULT_EPSILON = 16.0 / 255.0

DEFAULTS = {
    "seed": 0,
    "dataset": {
        "num_classes": 10,
        "image_size": 64,
        "samples_per_class": 500,
        "val_per_class": 50,
    },
    "stylizer": {
        "std_floor": 1e-5,
        "codec_epochs": 12,
        "codec_lr": 0.05,
        "codec_momentum": 0.9,
        "codec_batch_size": 32,
        "codec_train_subset": 2000,
        "codec_target_mse": 0.01,
        "codec_path": None,
    },
    "train": {
        "strategy": "debiased",
        "gamma": 0.8,
        "alpha": 0.5,
        "epochs": 30,
        "batch_size": 125,
        "learning_rate": 0.1,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "milestones": [0.5, 0.75],
        "lr_decay": 0.1,
        "branch_loss_weight": 1.0,
        "aug_prob": 0.5,
        "mixup_beta": 0.2,
        "share_affine": True,
        "bn_momentum": 0.1,
    },
    "eval": {
        "fgsm_epsilon": FGSM_DEFAULT_EPSILON,
        "bias_probe_size": 1000,
        "probe_epochs": 5,
        "probe_per_class": 50,
    },
}


def load_schema(name):
    """One of the JSON schemas shipped with the package."""
    with resources.files("shapetex.schemas").joinpath(f"{name}.schema.json").open() as f:
        return json.load(f)


def validate_document(doc, schema_name):
    """Validate any emitted/consumed JSON document against a shipped schema."""
    try:
        jsonschema.validate(doc, load_schema(schema_name))
    except jsonschema.ValidationError as e:
        raise ConfigError(f"{schema_name} validation failed: {e.message}") from e


def resolve_config(raw):
    """Validate a config dict and fill in every default."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config must be a JSON object, got {type(raw).__name__}")
    validate_document(raw, "experiment_config")
    resolved = copy.deepcopy(DEFAULTS)
    resolved.update({k: v for k, v in raw.items() if not isinstance(v, dict)})
    for section in ("dataset", "stylizer", "train", "eval"):
        resolved[section].update(raw.get(section, {}))
    resolved["dataset"].setdefault("seed", resolved["seed"])
    # Re-validate the resolved document: defaults must satisfy the schema too.
    validate_document({k: v for k, v in resolved.items()}, "experiment_config")
    return resolved


def load_config(path):
    """Read, validate, and resolve an experiment config file."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return resolve_config(raw)


def dataset_spec(resolved):
    d = resolved["dataset"]
    return DatasetSpec(
        num_classes=d["num_classes"],
        image_size=d["image_size"],
        samples_per_class=d["samples_per_class"],
        val_per_class=d["val_per_class"],
        seed=d["seed"],
    )


def train_config(resolved):
    t = resolved["train"]
    strategy = t["strategy"]
    cue = strategy in ("shape_biased", "texture_biased", "debiased", "debiased_mixup", "debiased_cutmix")
    return TrainConfig(
        strategy=strategy,
        gamma=t["gamma"] if cue else None,
        alpha=t["alpha"] if cue else None,
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        optimizer=OptimizerConfig(
            learning_rate=t["learning_rate"],
            momentum=t["momentum"],
            weight_decay=t["weight_decay"],
        ),
        seed=resolved["seed"],
        milestones=tuple(t["milestones"]),
        lr_decay=t["lr_decay"],
        branch_loss_weight=t["branch_loss_weight"],
        aug_prob=t["aug_prob"],
        mixup_beta=t["mixup_beta"],
        share_affine=t["share_affine"],
        bn_momentum=t["bn_momentum"],
    )
