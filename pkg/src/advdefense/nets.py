"""Networks and training: CNN classifier, denoising auto-encoder, and the
two-level block-switching ensemble.

The classifier architecture is fixed:

    conv(1->16, 3x3, pad 1) -> relu -> maxpool2
    conv(16->32, 3x3, pad 1) -> relu -> maxpool2
    flatten -> dense(1568 -> 10)

The boundary after the second pooling layer (index 6) splits each model into
a convolutional lower body and a dense upper body; the ensemble keeps N
independently trained lower bodies as parallel channels under one freshly
trained shared upper body and draws a channel at random per inference.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import Dataset
from .errors import ShapeError
from .layers import Conv2d, Dense, Flatten, MaxPool2, Network, ReLU, Reshape, Sigmoid, Upsample2
from .optim import SGD
from .tensor import Tensor, no_grad

N_CLASSES = 10
INPUT_SHAPE = (1, 28, 28)

CLASSIFIER_ARCH = "cnn-v1"
AUTOENCODER_ARCH = "ae-v1"
SWITCH_ARCH = "switch-v1"

# boundary after the last pooling layer: lower body = the whole conv stack
SPLIT_INDEX = 6

DEFAULT_MOMENTUM = 0.9


@dataclass
class TrainReport:
    epochs: int
    final_train_loss: float
    test_accuracy: float
    seed: int


class Classifier(Network):
    def __init__(self, layers, seed: int):
        super().__init__(layers, arch_id=f"{CLASSIFIER_ARCH}:seed={seed}", seed=seed)


def build_classifier(seed: int) -> Classifier:
    """Reference CNN with parameters drawn from the given seed."""
    rng = np.random.default_rng(seed)
    layers = [
        Conv2d(1, 16, 3, pad=1, rng=rng),
        ReLU(),
        MaxPool2(),
        Conv2d(16, 32, 3, pad=1, rng=rng),
        ReLU(),
        MaxPool2(),
        Flatten(),
        Dense(32 * 7 * 7, N_CLASSES, rng=rng),
    ]
    return Classifier(layers, seed)


def _check_image(image: np.ndarray):
    arr = np.asarray(image)
    if arr.shape != INPUT_SHAPE:
        raise ShapeError(f"expected image of shape {INPUT_SHAPE}, got {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(
            f"pixel values must lie in [0, 1], got range [{arr.min():g}, {arr.max():g}]"
        )
    return arr


def classify(net: Network, image) -> tuple[int, np.ndarray]:
    """Predict one image; ties break to the smallest class index."""
    arr = _check_image(image)
    with no_grad():
        logits = net.forward(Tensor(arr)).data
    probs = T.softmax(logits)
    return int(np.argmax(probs)), probs


def predict_batch(net: Network, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax predictions for an (N,1,H,W) array, evaluated in batches."""
    preds = np.empty(len(images), dtype=np.int64)
    with no_grad():
        for start in range(0, len(images), batch_size):
            logits = net.forward(Tensor(images[start : start + batch_size])).data
            preds[start : start + len(logits)] = logits.argmax(axis=1)
    return preds


def accuracy(net: Network, ds: Dataset, batch_size: int = 256) -> float:
    preds = predict_batch(net, ds.images, batch_size)
    return float((preds == ds.labels).mean())


def _run_epochs(forward, params, images, targets, loss_fn, epochs, lr, batch_size, rng,
                verbose=False, tag=""):
    """Shared minibatch loop; returns the mean loss of the last epoch."""
    opt = SGD(params, lr, momentum=DEFAULT_MOMENTUM)
    n = len(images)
    final_loss = float("nan")
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        batches = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss = loss_fn(forward(Tensor(images[idx])), targets[idx])
            loss.backward()
            opt.step()
            opt.zero_grad()
            total += loss.item()
            batches += 1
        final_loss = total / batches
        if verbose:
            print(f"  {tag} epoch {epoch + 1}/{epochs}  loss {final_loss:.4f}")
    return final_loss


def train_classifier(net: Classifier, train: Dataset, test: Dataset, epochs: int,
                     lr: float, batch_size: int = 64, seed: int | None = None,
                     verbose: bool = False) -> TrainReport:
    """Minibatch SGD on softmax cross-entropy; deterministic given the seed."""
    if len(train) == 0:
        raise ValueError("training dataset is empty")
    if train.images.shape[1:] != INPUT_SHAPE:
        raise ShapeError(
            f"dataset images {train.images.shape[1:]} do not match architecture input {INPUT_SHAPE}"
        )
    seed = net.seed if seed is None else seed
    rng = np.random.default_rng(seed)

    def ce(logits, labels):
        loss, _ = T.softmax_cross_entropy(logits, labels)
        return loss

    final_loss = _run_epochs(net.forward, net.params(), train.images, train.labels,
                             ce, epochs, lr, batch_size, rng, verbose, tag=net.arch_id)
    return TrainReport(epochs=epochs, final_train_loss=final_loss,
                       test_accuracy=accuracy(net, test), seed=seed)


# -- auto-encoder ---------------------------------------------------------------


class AutoEncoder:
    """Convolutional encoder to a dense bottleneck, mirrored decoder with a
    sigmoid output so reconstructions stay in [0, 1]."""

    def __init__(self, encoder: list, decoder: list, code_dim: int, seed: int):
        self.encoder = list(encoder)
        self.decoder = list(decoder)
        self.code_dim = code_dim
        self.seed = seed
        self.arch_id = f"{AUTOENCODER_ARCH}:seed={seed}"

    @property
    def layers(self):
        return self.encoder + self.decoder

    def forward(self, x) -> Tensor:
        out = T.as_tensor(x)
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def param_entries(self):
        entries = []
        for section, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, layer in enumerate(layers):
                for pname, p in (("weight", getattr(layer, "weight", None)),
                                 ("bias", getattr(layer, "bias", None))):
                    if p is not None:
                        entries.append((f"{section}.{i}.{pname}", p.data))
        return entries

    def reconstruct(self, image) -> np.ndarray:
        arr = _check_image(image)
        with no_grad():
            return self.forward(Tensor(arr)).data


def build_autoencoder(seed: int) -> AutoEncoder:
    rng = np.random.default_rng(seed)
    code_dim = 64
    encoder = [
        Conv2d(1, 8, 3, pad=1, rng=rng),
        ReLU(),
        MaxPool2(),
        Conv2d(8, 16, 3, pad=1, rng=rng),
        ReLU(),
        MaxPool2(),
        Flatten(),
        Dense(16 * 7 * 7, code_dim, rng=rng),
        ReLU(),
    ]
    decoder = [
        Dense(code_dim, 16 * 7 * 7, rng=rng),
        ReLU(),
        Reshape((16, 7, 7)),
        Upsample2(),
        Conv2d(16, 8, 3, pad=1, rng=rng),
        ReLU(),
        Upsample2(),
        Conv2d(8, 1, 3, pad=1, rng=rng),
        Sigmoid(),
    ]
    return AutoEncoder(encoder, decoder, code_dim, seed)


def train_autoencoder(ae: AutoEncoder, pairs, epochs: int, lr: float,
                      batch_size: int = 32, seed: int | None = None,
                      verbose: bool = False) -> TrainReport:
    """Fit reconstruction of clean targets from adversarial inputs.

    ``pairs`` is an AdvDataset; its adversarial images are the inputs and its
    clean images the targets, so the model learns to strip perturbations.
    The report carries the final reconstruction loss; test_accuracy is not
    meaningful here and is set to NaN.
    """
    if len(pairs.samples) == 0:
        raise ValueError("training pair set is empty")
    inputs = np.stack([s.adv for s in pairs.samples])
    targets = np.stack([s.clean for s in pairs.samples])
    if inputs.shape != targets.shape:
        raise ShapeError(f"adv/clean shape mismatch: {inputs.shape} vs {targets.shape}")
    seed = ae.seed if seed is None else seed
    rng = np.random.default_rng(seed)

    final_loss = _run_epochs(ae.forward, ae.params(), inputs, targets,
                             lambda out, tgt: T.mse(out, Tensor(tgt)),
                             epochs, lr, batch_size, rng, verbose, tag=ae.arch_id)
    return TrainReport(epochs=epochs, final_train_loss=final_loss,
                       test_accuracy=float("nan"), seed=seed)


def denoise(ae: AutoEncoder, image) -> np.ndarray:
    """Run one image through the trained auto-encoder."""
    return ae.reconstruct(image)


# -- block switching ------------------------------------------------------------


class SwitchEnsemble:
    """N frozen lower bodies sharing one trained upper body.

    A channel is drawn uniformly per inference from the caller's random
    stream; the chosen channel id is returned for auditability.
    """

    def __init__(self, channels: list[Network], upper: Network, split_index: int, seed: int):
        self.channels = list(channels)
        self.upper = upper
        self.split_index = split_index
        self.seed = seed
        self.arch_id = (
            f"{SWITCH_ARCH}:base={CLASSIFIER_ARCH},n={len(self.channels)},"
            f"split={split_index},seed={seed}"
        )

    @property
    def n_channels(self):
        return len(self.channels)

    def params(self):
        out = []
        for ch in self.channels:
            out.extend(ch.params())
        out.extend(self.upper.params())
        return out

    def param_entries(self):
        entries = []
        for c, ch in enumerate(self.channels):
            entries.extend((f"channels.{c}.{n}", a) for n, a in ch.param_entries())
        entries.extend((f"upper.{n}", a) for n, a in self.upper.param_entries())
        return entries

    def forward_channel(self, x, channel: int) -> Tensor:
        out = self.channels[channel].forward(x)
        return self.upper.forward(out)

    def classify(self, image, rng: np.random.Generator) -> tuple[int, np.ndarray, int]:
        arr = _check_image(image)
        channel = int(rng.integers(0, self.n_channels))
        with no_grad():
            logits = self.forward_channel(Tensor(arr), channel).data
        probs = T.softmax(logits)
        return int(np.argmax(probs)), probs, channel


def train_switch_level1(train: Dataset, test: Dataset, n: int, base_seed: int,
                        epochs: int, lr: float, batch_size: int = 64,
                        verbose: bool = False) -> list[Classifier]:
    """First training level: independent sub-models under seeds
    base_seed .. base_seed + n - 1."""
    if n < 2:
        raise ValueError(f"need at least 2 sub-models, got {n}")
    subs = []
    for i in range(n):
        net = build_classifier(base_seed + i)
        report = train_classifier(net, train, test, epochs, lr, batch_size, verbose=verbose)
        if verbose:
            print(f"  sub-model {i} (seed {net.seed}): test accuracy {report.test_accuracy:.4f}")
        subs.append(net)
    return subs


def assemble_switch(submodels: list[Classifier], split_index: int, seed: int) -> SwitchEnsemble:
    """Keep each sub-model's lower body as a frozen channel; install a fresh
    shared upper body initialized from the given seed."""
    if not submodels:
        raise ValueError("no sub-models given")
    archs = {m.arch_id.split(":")[0] for m in submodels}
    if len(archs) != 1:
        raise ShapeError(f"sub-models disagree on architecture: {sorted(archs)}")
    n_layers = len(submodels[0].layers)
    if not 0 < split_index < n_layers:
        raise ValueError(f"split index {split_index} not a valid boundary of {n_layers} layers")

    channels = []
    for i, m in enumerate(submodels):
        lower = copy.deepcopy(m.layers[:split_index])
        ch = Network(lower, arch_id=f"{CLASSIFIER_ARCH}-lower:{i}", seed=m.seed)
        for p in ch.params():
            p.requires_grad = False  # channels are never trained again
        channels.append(ch)

    fresh = build_classifier(seed)
    upper = Network(fresh.layers[split_index:], arch_id=f"{CLASSIFIER_ARCH}-upper", seed=seed)
    return SwitchEnsemble(channels, upper, split_index, seed)


def train_switch_level2(ens: SwitchEnsemble, train: Dataset, test: Dataset, epochs: int,
                        lr: float, batch_size: int = 64, seed: int | None = None,
                        verbose: bool = False) -> TrainReport:
    """Second training level: the shared upper body learns over frozen
    channels, one uniformly drawn channel per minibatch."""
    if not ens.channels or ens.upper is None:
        raise ValueError("ensemble is not assembled")
    if len(train) == 0:
        raise ValueError("training dataset is empty")
    seed = ens.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    opt = SGD(ens.upper.params(), lr, momentum=DEFAULT_MOMENTUM)
    n = len(train)
    final_loss = float("nan")
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            channel = int(rng.integers(0, ens.n_channels))
            with no_grad():
                feats = ens.channels[channel].forward(Tensor(train.images[idx]))
            logits = ens.upper.forward(Tensor(feats.data))
            loss, _ = T.softmax_cross_entropy(logits, train.labels[idx])
            loss.backward()
            opt.step()
            opt.zero_grad()
            total += loss.item()
            batches += 1
        final_loss = total / batches
        if verbose:
            print(f"  {ens.arch_id} epoch {epoch + 1}/{epochs}  loss {final_loss:.4f}")
    return TrainReport(epochs=epochs, final_train_loss=final_loss,
                       test_accuracy=switch_accuracy(ens, test, seed=seed), seed=seed)


def switch_classify(ens: SwitchEnsemble, image, rng: np.random.Generator):
    """Randomized-channel prediction: (label, probs, channel_used)."""
    return ens.classify(image, rng)


def switch_accuracy(ens: SwitchEnsemble, ds: Dataset, seed: int, batch_size: int = 256) -> float:
    """Test accuracy with a per-image channel assignment drawn from the seed.

    Images are grouped by assigned channel so the measurement is batched, but
    the result is identical to per-image evaluation in dataset order.
    """
    rng = np.random.default_rng(seed)
    assign = rng.integers(0, ens.n_channels, size=len(ds))
    correct = 0
    with no_grad():
        for c in range(ens.n_channels):
            sel = np.flatnonzero(assign == c)
            for start in range(0, len(sel), batch_size):
                idx = sel[start : start + batch_size]
                logits = ens.forward_channel(Tensor(ds.images[idx]), c).data
                correct += int((logits.argmax(axis=1) == ds.labels[idx]).sum())
    return correct / len(ds)


def channel_accuracy(ens: SwitchEnsemble, ds: Dataset, channel: int, batch_size: int = 256) -> float:
    """Deterministic accuracy of a single channel + shared upper path."""
    correct = 0
    with no_grad():
        for start in range(0, len(ds), batch_size):
            logits = ens.forward_channel(Tensor(ds.images[start : start + batch_size]), channel).data
            correct += int((logits.argmax(axis=1) == ds.labels[start : start + len(logits)]).sum())
    return correct / len(ds)
