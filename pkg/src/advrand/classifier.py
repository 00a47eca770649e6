"""Small size-agnostic CNN: conv-relu-conv-relu-global-average-pool-dense.

Global average pooling makes the network accept any input side at or
above :attr:`ModelArch.min_side`, which is what lets one frozen weight set
classify every resized and padded pattern.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import LabeledDataset
from .errors import ContractError, DimensionError
from .tensor import Tensor

log = logging.getLogger(__name__)

PARAM_NAMES = ("conv1.w", "conv1.b", "conv2.w", "conv2.b", "dense.w", "dense.b")


@dataclass(frozen=True)
class ModelArch:
    input_side: int = 28
    channels: int = 1
    conv1: int = 16
    conv2: int = 32
    num_classes: int = 10
    kernel: int = 3
    stride1: int = 1
    stride2: int = 2

    @property
    def min_side(self) -> int:
        """Smallest input side for which both convolutions are valid."""
        return self.kernel + (self.kernel - 1) * self.stride1

    def fingerprint(self) -> str:
        k = self.kernel
        return (
            f"in{self.input_side}x{self.channels}"
            f"-conv{k}x{k}s{self.stride1}c{self.conv1}"
            f"-conv{k}x{k}s{self.stride2}c{self.conv2}"
            f"-gap-dense{self.num_classes}"
        )

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k = self.kernel
        return {
            "conv1.w": (k, k, self.channels, self.conv1),
            "conv1.b": (self.conv1,),
            "conv2.w": (k, k, self.conv1, self.conv2),
            "conv2.b": (self.conv2,),
            "dense.w": (self.conv2, self.num_classes),
            "dense.b": (self.num_classes,),
        }

    def to_dict(self) -> dict:
        return {
            "input_side": self.input_side, "channels": self.channels,
            "conv1": self.conv1, "conv2": self.conv2, "num_classes": self.num_classes,
            "kernel": self.kernel, "stride1": self.stride1, "stride2": self.stride2,
        }


@dataclass
class ModelWeights:
    """Frozen parameters plus the provenance stored in a weight file."""

    arch: ModelArch
    params: dict[str, np.ndarray]
    seed: int = 0
    adversarially_trained: bool = False
    meta: dict = field(default_factory=dict)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(self.params[k], requires_grad) for k in PARAM_NAMES}

    def copy(self) -> "ModelWeights":
        return ModelWeights(
            self.arch, {k: v.copy() for k, v in self.params.items()},
            self.seed, self.adversarially_trained, dict(self.meta),
        )


def init_model(arch: ModelArch, seed: int) -> ModelWeights:
    """Glorot-uniform weights, zero biases, fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in arch.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        if len(shape) == 4:
            fan_in = shape[0] * shape[1] * shape[2]
            fan_out = shape[0] * shape[1] * shape[3]
        else:
            fan_in, fan_out = shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-bound, bound, size=shape)
    return ModelWeights(arch, params, seed=int(seed))


def _forward(arch: ModelArch, p: dict[str, Tensor], x: Tensor) -> Tensor:
    h = T.relu(T.bias_add(T.conv2d(x, p["conv1.w"], arch.stride1), p["conv1.b"]))
    h = T.relu(T.bias_add(T.conv2d(h, p["conv2.w"], arch.stride2), p["conv2.b"]))
    h = T.global_avg_pool(h)
    single = h.ndim == 1
    if single:
        h = T.reshape(h, (1, h.shape[0]))
    z = T.bias_add(T.matmul(h, p["dense.w"]), p["dense.b"])
    return T.reshape(z, (z.shape[1],)) if single else z


def forward_logits(weights: ModelWeights, image, params: dict[str, Tensor] | None = None) -> Tensor:
    """Logits for one ``(H, W, C)`` image (shape ``(C,)``) or a batch ``(N, H, W, C)``.

    Differentiable with respect to ``image`` when it is a requires-grad
    tensor, and with respect to ``params`` when those are passed in.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    arch = weights.arch
    if x.ndim not in (3, 4):
        raise DimensionError(f"image must be (H, W, C) or (N, H, W, C), got {x.shape}")
    h, w, c = x.shape[-3:]
    if c != arch.channels:
        raise DimensionError(f"model expects {arch.channels} channels, got {c}")
    if min(h, w) < arch.min_side:
        raise DimensionError(f"input side {min(h, w)} below minimum {arch.min_side}")
    return _forward(arch, params or weights.tensors(), x)


def predict(weights: ModelWeights, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Top-1 classes for a stack of equally sized images; ties go to the lowest index."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    out = np.empty(len(images), dtype=np.int64)
    params = weights.tensors()
    for start in range(0, len(images), batch_size):
        z = forward_logits(weights, Tensor(images[start:start + batch_size]), params)
        out[start:start + batch_size] = np.argmax(z.data, axis=-1)
    return out


def accuracy(weights: ModelWeights, dataset: LabeledDataset) -> float:
    if len(dataset) == 0:
        return float("nan")
    return float(np.mean(predict(weights, dataset.images) == dataset.labels))


def _fgsm_batch(weights: ModelWeights, images: np.ndarray, labels: np.ndarray, eps: np.ndarray):
    # per-example gradients: the batch loss is a sum of independent terms
    x = Tensor(images, requires_grad=True)
    loss = T.sum(T.softmax_cross_entropy(forward_logits(weights, x), labels))
    g = T.grad(loss, x)
    return np.clip(images + eps[:, None, None, None] * np.sign(g), 0.0, 1.0)


def adversarial_train(
    weights: ModelWeights,
    dataset: LabeledDataset,
    epochs: int,
    lr: float,
    batch_size: int,
    epsilon_list,
    mix_fraction: float,
    seed: int,
    momentum: float = 0.9,
    history: list | None = None,
    scale_range: tuple[int, int] | None = None,
    brightness: float | None = None,
) -> ModelWeights:
    """Minibatch SGD where a fraction of every batch is replaced by FGSM images.

    The FGSM examples are crafted against the weights current at that step,
    with each example's epsilon drawn uniformly from ``epsilon_list``.  With
    ``mix_fraction == 0`` this is exactly :func:`train`.

    ``scale_range=(lo, hi)`` enables scale augmentation: each batch is
    bilinearly resized to a side drawn uniformly from ``[lo, hi)``.
    ``brightness=d`` adds a per-example offset drawn from ``[-d, d]`` (clipped
    to [0, 1]) before the FGSM step.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    if not 0.0 <= mix_fraction <= 1.0:
        raise ContractError(f"mix_fraction must lie in [0, 1], got {mix_fraction}")
    eps_choices = np.asarray(list(epsilon_list), dtype=np.float64)
    if mix_fraction > 0 and (eps_choices.size == 0 or np.any((eps_choices <= 0) | (eps_choices >= 1))):
        raise ContractError("epsilons must lie in (0, 1)")
    if epochs < 1 or batch_size < 1 or lr <= 0:
        raise ContractError("epochs, batch_size and lr must be positive")

    shuffle_rng, adv_rng, scale_rng, colour_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)
    )
    out = weights.copy()
    velocity = {k: np.zeros_like(v) for k, v in out.params.items()}
    n = len(dataset)
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb = dataset.images[idx]
            yb = dataset.labels[idx]
            if brightness:
                delta = colour_rng.uniform(-brightness, brightness, size=len(idx))
                xb = np.clip(xb + delta[:, None, None, None], 0.0, 1.0)
            n_adv = int(np.floor(mix_fraction * len(idx)))
            if n_adv:
                pick = adv_rng.choice(len(idx), size=n_adv, replace=False)
                eps = adv_rng.choice(eps_choices, size=n_adv)
                xb = xb.copy()
                xb[pick] = _fgsm_batch(out, xb[pick], yb[pick], eps)
            if scale_range is not None:
                side = int(scale_rng.integers(scale_range[0], scale_range[1]))
                if side != xb.shape[1]:
                    xb = T.resize_bilinear(Tensor(xb), side).data
            params = out.tensors(requires_grad=True)
            losses = T.softmax_cross_entropy(forward_logits(out, Tensor(xb), params), yb)
            loss = T.mean(losses)
            grads = T.backward(loss, [params[k] for k in PARAM_NAMES])
            for name, g in zip(PARAM_NAMES, grads):
                velocity[name] = momentum * velocity[name] - lr * g
                out.params[name] = out.params[name] + velocity[name]
            total += float(losses.data.sum())
            count += len(idx)
        mean_loss = total / count
        if history is not None:
            history.append(mean_loss)
        log.info("epoch %d/%d loss %.4f", epoch + 1, epochs, mean_loss)
    out.seed = int(seed)
    out.adversarially_trained = mix_fraction > 0
    out.meta = dict(out.meta, epochs=epochs, lr=lr, batch_size=batch_size, momentum=momentum,
                    mix_fraction=mix_fraction, epsilons=[float(e) for e in eps_choices],
                    scale_range=list(scale_range) if scale_range else None,
                    brightness=brightness)
    return out


def train(
    weights: ModelWeights,
    dataset: LabeledDataset,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
    momentum: float = 0.9,
    history: list | None = None,
    scale_range: tuple[int, int] | None = None,
    brightness: float | None = None,
) -> ModelWeights:
    """Plain minibatch SGD with momentum and a seeded shuffle."""
    return adversarial_train(
        weights, dataset, epochs, lr, batch_size, (), 0.0, seed,
        momentum=momentum, history=history, scale_range=scale_range, brightness=brightness,
    )


def select_correct_subset(weights_list, dataset: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """Random ``n`` test images that every model in ``weights_list`` classifies correctly."""
    if n < 0:
        raise ContractError("n must be non-negative")
    ok = np.ones(len(dataset), dtype=bool)
    for w in weights_list:
        ok &= predict(w, dataset.images) == dataset.labels
    candidates = np.flatnonzero(ok)
    if n > len(candidates):
        raise ContractError(f"only {len(candidates)} images qualify, {n} requested")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(candidates, size=n, replace=False))
    sub = dataset.subset(chosen)
    sub.meta["source_index"] = chosen.tolist()
    return sub
