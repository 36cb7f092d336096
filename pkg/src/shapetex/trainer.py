"""Training loops for vanilla, biased, and debiased strategies.

Cue-conflict strategies process two batches per optimizer step: a clean batch
through the main BN branch with true labels, and a freshly stylized
cue-conflict batch through the auxiliary branch with strategy-assigned
labels.  The two losses are summed (1:1 by default) before the step.
Cue-conflict images are regenerated every step; only the frozen codec's
encodings of the static training images are precomputed, since they never
change within a run.
"""

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import tensor as T
from .data import assign_label, draw_partners, cutmix_box, label_array, stack_pixels
from .errors import NanLossError, RangeError, UninitializedStylizerError
from .model import DebiasNet, predict
from .optim import OptimizerConfig, sgd_step
from .rng import component_rng
from .stylizer import StyleTransferConfig, stylize_features

log = logging.getLogger(__name__)

STRATEGIES = (
    "vanilla",
    "twox_epochs",
    "shape_biased",
    "texture_biased",
    "debiased",
    "debiased_mixup",
    "debiased_cutmix",
)
_CUE_CONFLICT = {"shape_biased", "texture_biased", "debiased", "debiased_mixup", "debiased_cutmix"}
_LABEL_STRATEGY = {
    "shape_biased": "shape_biased",
    "texture_biased": "texture_biased",
    "debiased": "debiased",
    "debiased_mixup": "debiased",
    "debiased_cutmix": "debiased",
}


@dataclass(frozen=True)
class TrainConfig:
    strategy: str
    gamma: Optional[float] = None
    alpha: Optional[float] = None
    epochs: int = 30
    batch_size: int = 125
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(0.1, 0.9, 5e-4))
    seed: int = 0
    milestones: tuple = (0.5, 0.75)
    lr_decay: float = 0.1
    branch_loss_weight: float = 1.0
    aug_prob: float = 0.5
    mixup_beta: float = 0.2
    share_affine: bool = True
    bn_momentum: float = 0.1

    @property
    def uses_cue_conflict(self):
        return self.strategy in _CUE_CONFLICT

    @property
    def resolved_epochs(self):
        """twox_epochs is vanilla with a doubled schedule."""
        return self.epochs * 2 if self.strategy == "twox_epochs" else self.epochs

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise RangeError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.uses_cue_conflict:
            label_strategy = _LABEL_STRATEGY[self.strategy]
            if label_strategy == "debiased" and self.gamma is None:
                raise RangeError(f"strategy {self.strategy} requires gamma")
            if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
                raise RangeError(f"gamma must be in [0, 1], got {self.gamma}")
            if self.alpha is None:
                raise RangeError(f"strategy {self.strategy} requires alpha")
        else:
            if self.gamma is not None or self.alpha is not None:
                log.warning("strategy %s ignores gamma/alpha", self.strategy)
        if self.epochs < 1:
            raise RangeError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise RangeError(f"batch_size must be >= 2, got {self.batch_size}")


@dataclass
class RunReport:
    strategy: str
    seed: int
    epochs: int
    clean_loss: list
    cc_loss: Optional[list]
    val_accuracy: list
    seconds: list
    final_val_accuracy: float
    checkpoint_id: str

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "epochs": self.epochs,
            "clean_loss": self.clean_loss,
            "cc_loss": self.cc_loss,
            "val_accuracy": self.val_accuracy,
            "seconds": self.seconds,
            "final_val_accuracy": self.final_val_accuracy,
            "checkpoint_id": self.checkpoint_id,
        }


def state_digest(net):
    """Deterministic id of all weights and buffers (sha1, first 16 hex chars)."""
    h = hashlib.sha1()
    for name, arr in net.named_tensors().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return h.hexdigest()[:16]


def evaluate_accuracy(net, images, labels, batch_size=250):
    preds = predict(net, images, batch_size=batch_size)
    return float((preds == labels).mean())


def _epoch_lr(config, epoch):
    lr = config.optimizer.learning_rate
    total = config.resolved_epochs
    for frac in config.milestones:
        if epoch >= int(frac * total):
            lr *= config.lr_decay
    return lr


def _labels_for_pairs(strategy, gamma, ys, yt, num_classes):
    """Stacked soft labels for cue-conflict pairs, matching assign_label exactly."""
    if strategy == "shape_biased":
        gamma = 1.0
    elif strategy == "texture_biased":
        gamma = 0.0
    out = np.zeros((len(ys), num_classes), dtype=np.float32)
    np.add.at(out, (np.arange(len(ys)), ys), np.float32(gamma))
    np.add.at(out, (np.arange(len(yt)), yt), np.float32(1.0 - gamma))
    return out


def _apply_mix(config, x, y, aug_rng):
    """Mixup or CutMix on the clean branch, batch-level with probability aug_prob."""
    if aug_rng.uniform() >= config.aug_prob:
        return x, y
    perm = aug_rng.permutation(len(x))
    if config.strategy == "debiased_mixup":
        lam = np.float32(aug_rng.beta(config.mixup_beta, config.mixup_beta))
        x = lam * x + (np.float32(1.0) - lam) * x[perm]
        y = lam * y + (np.float32(1.0) - lam) * y[perm]
        return x, y
    box = cutmix_box(aug_rng, x.shape[2], x.shape[3])
    y0, y1, x0, x1 = box
    x = x.copy()
    x[:, :, y0:y1, x0:x1] = x[perm][:, :, y0:y1, x0:x1]
    frac = np.float32((y1 - y0) * (x1 - x0) / (x.shape[2] * x.shape[3]))
    y = (np.float32(1.0) - frac) * y + frac * y[perm]
    return x, y


def train(config, train_samples, val_samples, codec=None):
    """Run one training strategy; returns (net, RunReport).

    Deterministic given (config, seed): batch order, pairing, and
    augmentation draws all come from named per-seed streams.
    """
    config.validate()
    x_train = stack_pixels(train_samples)
    y_train = label_array(train_samples, "shape")
    x_val = stack_pixels(val_samples)
    y_val = label_array(val_samples, "shape")
    num_classes = int(max(y_train.max(), y_val.max())) + 1
    y_onehot = np.zeros((len(y_train), num_classes), dtype=np.float32)
    y_onehot[np.arange(len(y_train)), y_train] = 1.0

    net = DebiasNet(
        num_classes=num_classes,
        seed=config.seed,
        share_affine=config.share_affine,
        bn_momentum=config.bn_momentum,
    )
    params = net.parameters()

    use_cc = config.uses_cue_conflict
    if use_cc:
        if codec is None or not codec.trained:
            raise UninitializedStylizerError(f"strategy {config.strategy} needs a trained codec")
        style_cfg = StyleTransferConfig(alpha=config.alpha)
        enc_cache = codec.encode(x_train)
        label_strategy = _LABEL_STRATEGY[config.strategy]
        gamma = config.gamma if label_strategy == "debiased" else (
            1.0 if label_strategy == "shape_biased" else 0.0
        )

    order_rng = component_rng(config.seed, "batch_order")
    pair_rng = component_rng(config.seed, "pairing")
    aug_rng = component_rng(config.seed, "augment")

    epochs = config.resolved_epochs
    clean_losses, cc_losses, val_accs, seconds = [], [], [], []
    for epoch in range(epochs):
        t0 = time.perf_counter()
        lr = _epoch_lr(config, epoch)
        perm = order_rng.permutation(len(x_train))
        clean_sum = cc_sum = count = 0.0
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            if len(idx) < 2:
                continue
            xb, yb = x_train[idx], y_onehot[idx]
            if config.strategy in ("debiased_mixup", "debiased_cutmix"):
                xb, yb = _apply_mix(config, xb, yb, aug_rng)
            logits = net.forward(T.Tensor(xb), "main", "train")
            loss_clean = T.soft_cross_entropy(logits, yb, validate=False)
            total = loss_clean

            loss_cc_val = 0.0
            if use_cc:
                partners = draw_partners(len(idx), pair_rng)
                feats = stylize_features(enc_cache[idx], enc_cache[idx[partners]], style_cfg)
                cc_images = np.clip(codec.decode(feats), 0.0, 1.0)
                cc_labels = _labels_for_pairs(
                    label_strategy, gamma, y_train[idx], y_train[idx[partners]], num_classes
                )
                cc_logits = net.forward(T.Tensor(cc_images), "aux", "train")
                loss_cc = T.soft_cross_entropy(cc_logits, cc_labels, validate=False)
                total = T.add(loss_clean, T.scale(loss_cc, config.branch_loss_weight))
                loss_cc_val = loss_cc.item()

            if not np.isfinite(total.data):
                raise NanLossError(
                    "non-finite training loss",
                    {"epoch": epoch, "step": start // config.batch_size, "lr": lr,
                     "strategy": config.strategy, "seed": config.seed},
                )
            T.backward(total)
            sgd_step(params, config.optimizer, lr=lr)
            clean_sum += loss_clean.item() * len(idx)
            cc_sum += loss_cc_val * len(idx)
            count += len(idx)

        clean_losses.append(clean_sum / count)
        if use_cc:
            cc_losses.append(cc_sum / count)
        val_accs.append(evaluate_accuracy(net, x_val, y_val))
        seconds.append(time.perf_counter() - t0)

    report = RunReport(
        strategy=config.strategy,
        seed=config.seed,
        epochs=epochs,
        clean_loss=clean_losses,
        cc_loss=cc_losses if use_cc else None,
        val_accuracy=val_accs,
        seconds=seconds,
        final_val_accuracy=val_accs[-1],
        checkpoint_id=state_digest(net),
    )
    return net, report


@dataclass
class ProbeResult:
    accuracy: float
    head_resized: bool
    n_train: int
    n_eval: int


def linear_probe(net, probe_data, label_from, epochs=5, seed=0, lr=0.1,
                 holdout_fraction=0.2, batch_size=128):
    """Retrain only the classifier on frozen features; held-out accuracy.

    Features come from eval-mode main-branch forwards (no BN updates, no
    gradients into the trunk).  The head is reinitialized from the seed's
    head_init stream and trained for ``epochs``; with 0 epochs the accuracy
    of the random head sits at chance.  A probe class count different from
    the net's resizes the head (flagged in the result).
    """
    images = stack_pixels(probe_data)
    labels = label_array(probe_data, label_from)
    num_probe_classes = int(labels.max()) + 1

    feats = np.empty((len(images), net.fc_weight.value.data.shape[1]), dtype=np.float32)
    with T.no_grad():
        for i in range(0, len(images), 250):
            f = net.features(T.Tensor(images[i : i + 250]), "main", "eval")
            feats[i : i + 250] = f.data.mean(axis=(2, 3))

    rng = component_rng(seed, "head_init")
    order = rng.permutation(len(images))
    n_eval = max(1, int(round(len(images) * holdout_fraction)))
    eval_idx, train_idx = order[:n_eval], order[n_eval:]

    dim = feats.shape[1]
    from .optim import Parameter  # local import to avoid cycles at module load

    w = Parameter(rng.normal(0.0, np.sqrt(2.0 / dim), (num_probe_classes, dim)).astype(np.float32))
    b = Parameter(np.zeros(num_probe_classes, dtype=np.float32))
    opt = OptimizerConfig(learning_rate=lr, momentum=0.9, weight_decay=0.0)
    y_onehot = np.zeros((len(labels), num_probe_classes), dtype=np.float32)
    y_onehot[np.arange(len(labels)), labels] = 1.0

    for _ in range(epochs):
        perm = train_idx[rng.permutation(len(train_idx))]
        for i in range(0, len(perm), batch_size):
            idx = perm[i : i + batch_size]
            logits = T.linear(T.Tensor(feats[idx]), w.value, b.value)
            loss = T.soft_cross_entropy(logits, y_onehot[idx], validate=False)
            T.backward(loss)
            sgd_step([w, b], opt)

    eval_logits = feats[eval_idx] @ w.value.data.T + b.value.data
    acc = float((np.argmax(eval_logits, axis=1) == labels[eval_idx]).mean())
    return ProbeResult(
        accuracy=acc,
        head_resized=num_probe_classes != net.num_classes,
        n_train=len(train_idx),
        n_eval=len(eval_idx),
    )


def sweep_gamma(base_config, gammas, train_samples, val_samples, codec, probe=None, csv_path=None):
    """One full debiased run per gamma at a fixed seed; returns result rows.

    Rows carry the final val accuracy and, when a cue-conflict ``probe`` is
    provided, the shape-bias score.  Optionally emits a CSV.
    """
    if not gammas:
        raise RangeError("sweep_gamma: empty gamma list")
    for g in gammas:
        if not 0.0 <= g <= 1.0:
            raise RangeError(f"sweep_gamma: gamma {g} outside [0, 1]")
    rows = []
    for g in gammas:
        cfg = replace(base_config, strategy="debiased", gamma=float(g))
        net, report = train(cfg, train_samples, val_samples, codec)
        row = {"gamma": float(g), "val_accuracy": report.final_val_accuracy}
        if probe is not None:
            from .robustness import shape_bias_score

            res = shape_bias_score(net, probe)
            row["shape_bias_score"] = res.score
            row["excluded"] = res.n_excluded
        rows.append(row)
    if csv_path is not None:
        import csv as _csv

        with open(csv_path, "w", newline="") as f:
            writer = _csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return rows
