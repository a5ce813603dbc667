"""Single-step gradient-sign attack and the supervised adversarial dataset.

The attack perturbs the input image, never the model: each pixel moves by
epsilon in the direction of the sign of the loss gradient with respect to
the input, then the result is clipped back to valid pixel range.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import Dataset
from .errors import AdvDatasetError, GradientError
from .nets import Classifier, classify
from .tensor import Tensor, frozen

LINF_TOL = 1e-6

ADV_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.2
    clip_lo: float = 0.0
    clip_hi: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.clip_lo < self.clip_hi:
            raise ValueError(f"clip range [{self.clip_lo}, {self.clip_hi}] is empty")
        if self.epsilon > self.clip_hi - self.clip_lo:
            raise ValueError(
                f"epsilon {self.epsilon} exceeds clip range width {self.clip_hi - self.clip_lo}"
            )


@dataclass
class AdvSample:
    clean: np.ndarray
    adv: np.ndarray
    true_label: int
    clean_pred: int
    adv_pred: int


@dataclass
class AdvDataset:
    samples: list[AdvSample]
    config: AttackConfig
    source_model_id: str = ""

    def __len__(self):
        return len(self.samples)

    def validate(self):
        if not self.samples:
            raise AdvDatasetError("adversarial dataset is empty")
        eps = self.config.epsilon
        for i, s in enumerate(self.samples):
            delta = np.abs(s.adv.astype(np.float64) - s.clean.astype(np.float64))
            if delta.max() > eps + LINF_TOL:
                raise AdvDatasetError(
                    f"sample {i}: |adv - clean| reaches {delta.max():g}, budget is {eps}"
                )
            if s.adv.min() < self.config.clip_lo or s.adv.max() > self.config.clip_hi:
                raise AdvDatasetError(f"sample {i}: adversarial pixels escape the clip range")
            if not np.isfinite(s.adv).all() or not np.isfinite(s.clean).all():
                raise AdvDatasetError(f"sample {i}: non-finite pixel values")
            if not 0 <= s.true_label < 10:
                raise AdvDatasetError(f"sample {i}: label {s.true_label} out of range")


def fgsm(net: Classifier, image, label: int, cfg: AttackConfig) -> np.ndarray:
    """adv = clip(image + epsilon * sign(d loss / d image)).

    sign(0) = 0, so zero-gradient pixels stay untouched and epsilon = 0
    reproduces the input bitwise.  Model parameters are read, never written.
    """
    arr = np.asarray(image, dtype=np.float32)
    x = Tensor(arr, requires_grad=True)
    params = net.params()
    with frozen(params):
        logits = net.forward(x)
        loss, _ = T.softmax_cross_entropy(logits, label)
        loss.backward()
    grad = x.grad
    if grad is None or not np.isfinite(grad).all():
        raise GradientError("attack gradient is missing or non-finite")
    adv = arr + np.float32(cfg.epsilon) * np.sign(grad, dtype=np.float32)
    return np.clip(adv, np.float32(cfg.clip_lo), np.float32(cfg.clip_hi))


def build_adv_dataset(net: Classifier, data: Dataset, cfg: AttackConfig) -> AdvDataset:
    """Attack every image in order, recording clean and adversarial
    predictions; deterministic for a fixed model and dataset."""
    if len(data) == 0:
        raise AdvDatasetError("input dataset is empty")
    samples = []
    for i in range(len(data)):
        clean = data.images[i]
        true_label = int(data.labels[i])
        clean_pred, _ = classify(net, clean)
        adv = fgsm(net, clean, true_label, cfg)
        adv_pred, _ = classify(net, adv)
        samples.append(AdvSample(clean=clean.copy(), adv=adv, true_label=true_label,
                                 clean_pred=clean_pred, adv_pred=adv_pred))
    return AdvDataset(samples=samples, config=cfg, source_model_id=net.arch_id)


def attack_success_rate(ds: AdvDataset) -> float:
    """Fraction of clean-correct samples whose adversarial twin is
    misclassified."""
    if not ds.samples:
        raise AdvDatasetError("adversarial dataset is empty")
    clean_correct = [s for s in ds.samples if s.clean_pred == s.true_label]
    if not clean_correct:
        raise AdvDatasetError("no clean-correct samples; success rate undefined")
    flips = sum(1 for s in clean_correct if s.adv_pred != s.true_label)
    return flips / len(clean_correct)


def split_adv_dataset(ds: AdvDataset, n_eval: int, seed: int) -> tuple[AdvDataset, AdvDataset]:
    """Seeded disjoint split into a denoiser-training part and a held-out
    evaluation part of exactly n_eval samples."""
    if not 0 < n_eval < len(ds.samples):
        raise ValueError(f"n_eval {n_eval} out of range for {len(ds.samples)} samples")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds.samples))
    eval_idx = np.sort(perm[:n_eval])
    train_idx = np.sort(perm[n_eval:])
    pick = lambda idx: AdvDataset(samples=[ds.samples[i] for i in idx],
                                  config=ds.config, source_model_id=ds.source_model_id)
    return pick(train_idx), pick(eval_idx)


# -- persistence --------------------------------------------------------------


def save_adv_dataset(ds: AdvDataset, directory):
    """Persist as a directory: JSON manifest plus raw little-endian float32
    image payloads, one pair of files per sample."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for i, s in enumerate(ds.samples):
        clean_file = f"clean_{i:05d}.f32"
        adv_file = f"adv_{i:05d}.f32"
        s.clean.astype("<f4").tofile(directory / clean_file)
        s.adv.astype("<f4").tofile(directory / adv_file)
        records.append({
            "index": i,
            "true_label": s.true_label,
            "clean_pred": s.clean_pred,
            "adv_pred": s.adv_pred,
            "clean_file": clean_file,
            "adv_file": adv_file,
        })
    manifest = {
        "schema_version": ADV_SCHEMA_VERSION,
        "config": {"epsilon": ds.config.epsilon, "clip_lo": ds.config.clip_lo,
                   "clip_hi": ds.config.clip_hi},
        "source_model_id": ds.source_model_id,
        "image_shape": list(ds.samples[0].clean.shape),
        "samples": records,
    }
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_adv_dataset(directory) -> AdvDataset:
    """Read a persisted dataset back, validating every invariant."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise AdvDatasetError(f"no manifest at {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("schema_version") != ADV_SCHEMA_VERSION:
        raise AdvDatasetError(f"unsupported schema version {manifest.get('schema_version')}")
    cfg = AttackConfig(**manifest["config"])
    shape = tuple(manifest["image_shape"])
    samples = []
    for rec in manifest["samples"]:
        clean = np.fromfile(directory / rec["clean_file"], dtype="<f4")
        adv = np.fromfile(directory / rec["adv_file"], dtype="<f4")
        if clean.size != np.prod(shape) or adv.size != np.prod(shape):
            raise AdvDatasetError(f"sample {rec['index']}: payload size mismatch")
        samples.append(AdvSample(clean=clean.reshape(shape), adv=adv.reshape(shape),
                                 true_label=rec["true_label"], clean_pred=rec["clean_pred"],
                                 adv_pred=rec["adv_pred"]))
    ds = AdvDataset(samples=samples, config=cfg,
                    source_model_id=manifest["source_model_id"])
    ds.validate()
    return ds
