"""Gradient-based attacks: FGSM, L2 DeepFool and L2 Carlini-Wagner.

Every attack takes ``model_fn``, a callable mapping an ``(H, W, C)`` image
tensor to logits.  The logits may be a ``(C,)`` vector (one model) or a
``(P, C)`` matrix (the same model behind ``P`` fixed patterns).  With
several patterns the attack objective is the mean over patterns, and an
attack only counts as successful once every pattern misclassifies.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericError
from .tensor import Tensor

log = logging.getLogger(__name__)

KINDS = ("fgsm", "deepfool", "cw")
DEFAULT_MAX_ITER = {"fgsm": 1, "deepfool": 50, "cw": 200}


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "fgsm"
    epsilon: float = 10.0 / 255.0
    max_iter: int | None = None
    overshoot: float = 0.02
    c: float = 1.0
    k: float = 0.0
    lr: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ContractError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ContractError("max_iter must be positive")
        if self.overshoot < 0 or self.c <= 0 or self.k < 0 or self.lr <= 0:
            raise ContractError("need overshoot >= 0, c > 0, k >= 0, lr > 0")

    @property
    def iterations(self) -> int:
        return self.max_iter if self.max_iter is not None else DEFAULT_MAX_ITER[self.kind]

    @property
    def name(self) -> str:
        """Table label: ``FGSM-10`` (epsilon in 8-bit units), ``DeepFool``, ``C&W``."""
        if self.kind == "fgsm":
            e = self.epsilon * 255.0
            return f"FGSM-{int(round(e))}" if abs(e - round(e)) < 1e-9 else f"FGSM-{e:g}"
        return {"deepfool": "DeepFool", "cw": "C&W"}[self.kind]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "epsilon": self.epsilon, "max_iter": self.iterations,
            "overshoot": self.overshoot, "c": self.c, "k": self.k, "lr": self.lr, "seed": self.seed,
        }


@dataclass
class AttackResult:
    adversarial: np.ndarray
    perturbation: np.ndarray
    true_class: int
    success: bool
    iterations_used: int
    perturbation_l2: float = field(init=False)
    perturbation_linf: float = field(init=False)
    error: str | None = None

    def __post_init__(self):
        self.perturbation_l2 = float(np.sqrt(np.sum(self.perturbation ** 2)))
        self.perturbation_linf = float(np.max(np.abs(self.perturbation))) if self.perturbation.size else 0.0


def _as_image(image) -> np.ndarray:
    x = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if x.ndim != 3:
        raise ContractError(f"image must be (H, W, C), got {x.shape}")
    return x


def _logits(model_fn, x: Tensor) -> Tensor:
    z = model_fn(x)
    return T.reshape(z, (1, z.shape[0])) if z.ndim == 1 else z


def _all_wrong(z: np.ndarray, true_class: int) -> bool:
    return bool(np.all(np.argmax(z, axis=1) != true_class))


def _finite(a: np.ndarray, what: str):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite {what}")


def _result(clean, adv, true_class, model_fn, iterations, success=None):
    if success is None:
        success = _all_wrong(_logits(model_fn, Tensor(adv)).data, true_class)
    return AttackResult(adv, adv - clean, int(true_class), bool(success), int(iterations))


def fgsm(model_fn, image, true_class: int, epsilon: float, bounds=(0.0, 1.0)) -> AttackResult:
    """One step of size ``epsilon`` along the sign of the loss gradient."""
    x0 = _as_image(image)
    if not 0.0 <= epsilon < 1.0:
        raise ContractError(f"epsilon must lie in [0, 1), got {epsilon}")
    x = Tensor(x0, requires_grad=True)
    z = _logits(model_fn, x)
    labels = np.full(z.shape[0], true_class)
    loss = T.mean(T.softmax_cross_entropy(z, labels))
    g = T.grad(loss, x)
    _finite(g, "gradient")
    adv = x0 + epsilon * np.sign(g)
    if bounds is not None:
        adv = np.clip(adv, *bounds)
    # rounding in x0 + eps can overshoot by an ulp; step back so |adv - x0| <= eps holds exactly
    over = np.abs(adv - x0) > epsilon
    while over.any():
        adv[over] = np.nextafter(adv[over], x0[over])
        over = np.abs(adv - x0) > epsilon
    return _result(x0, adv, true_class, model_fn, 1)


def deepfool(
    model_fn, image, true_class: int, max_iter: int = 50, overshoot: float = 0.02,
    bounds=(0.0, 1.0),
) -> AttackResult:
    """Multiclass L2 DeepFool.

    Each iteration linearizes ``Z_i - Z_true`` at ``x + r`` (averaged over
    the patterns that still predict the true class) and steps to the nearest
    linearized boundary.  Success is checked on ``x + (1 + overshoot) r``,
    clipped to ``bounds``.
    """
    x0 = _as_image(image)
    r_tot = np.zeros_like(x0)
    candidate = x0
    for it in range(max_iter + 1):
        cz = _logits(model_fn, Tensor(candidate)).data
        _finite(cz, "logits")
        active = np.argmax(cz, axis=1) == true_class
        if not active.any():
            return _result(x0, candidate, true_class, model_fn, it, success=True)
        if it == max_iter:
            break
        # linearize at x0 + r_tot, not at the overshot candidate, so the
        # overshoot cannot shrink into a fixed point on the boundary
        x = Tensor(x0 + r_tot, requires_grad=True)
        z = _logits(model_fn, x)
        zd = z.data
        _finite(zd, "logits")
        rows = active / active.sum()
        z_mean = rows @ zd
        best, best_dist = None, np.inf
        for k in range(zd.shape[1]):
            if k == true_class:
                continue
            seed = np.zeros_like(zd)
            seed[:, k] = rows
            seed[:, true_class] = -rows
            (w_k,) = T.vjp(z, seed, [x])
            f_k = z_mean[k] - z_mean[true_class]
            norm = np.sqrt(np.sum(w_k * w_k))
            if norm == 0.0:
                continue
            dist = abs(f_k) / norm
            if dist < best_dist:
                best, best_dist = (f_k, w_k, norm), dist
        if best is None:
            raise NumericError("all class gradients vanished")
        f_k, w_k, norm = best
        r_tot = r_tot + (abs(f_k) / norm ** 2) * w_k
        _finite(r_tot, "perturbation")
        candidate = x0 + (1.0 + overshoot) * r_tot
        if bounds is not None:
            # clipped coordinates must not keep accumulating
            r_tot = np.clip(x0 + r_tot, *bounds) - x0
            candidate = np.clip(candidate, *bounds)
    return _result(x0, candidate, true_class, model_fn, max_iter, success=False)


def to_tanh_space(x: np.ndarray, inset: float = 1e-6) -> np.ndarray:
    return np.arctanh(2.0 * np.clip(x, inset, 1.0 - inset) - 1.0)


def from_tanh_space(w: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(w) + 1.0)


def cw_l2(
    model_fn, image, true_class: int, c: float = 1.0, k: float = 0.0,
    max_iter: int = 200, lr: float = 0.01, inset: float = 1e-6,
) -> AttackResult:
    """Carlini-Wagner L2 with a fixed trade-off constant and plain gradient descent.

    Minimizes ``||x' - x||^2 + c * f(x')`` over ``w`` with
    ``x' = (tanh(w) + 1) / 2`` and ``f = max(Z_true - max_{i != true} Z_i, -k)``
    (averaged over patterns).  Returns the lowest-distortion iterate that
    fools every pattern, or the last iterate if none does.
    """
    if c <= 0:
        raise ContractError("c must be positive")
    x0 = _as_image(image)
    clean = Tensor(x0)
    w = to_tanh_space(x0, inset)
    best, best_dist = None, np.inf
    final = None
    for it in range(max_iter + 1):
        wt = Tensor(w, requires_grad=True)
        xa = T.mul_scalar(T.add_scalar(T.tanh(wt), 1.0), 0.5)
        dist = T.sum(T.square(T.sub(xa, clean)))
        z = _logits(model_fn, xa)
        n_cls = z.shape[1]
        others = np.array([i for i in range(n_cls) if i != true_class])
        margin = T.sub(z[:, true_class], T.max(z[:, others], axis=1))
        f = T.mean(T.clamp(margin, -k, np.inf))
        loss = T.add(dist, T.mul_scalar(f, c))
        _finite(loss.data, "loss")
        final = xa.data
        if _all_wrong(z.data, true_class) and dist.item() < best_dist:
            best, best_dist = xa.data, dist.item()
        if it == max_iter:
            break
        g = T.grad(loss, wt)
        _finite(g, "gradient")
        w = w - lr * g
    if best is not None:
        return _result(x0, best, true_class, model_fn, max_iter, success=True)
    return _result(x0, final, true_class, model_fn, max_iter, success=False)


def run_attack(config: AttackConfig, model_fn, image, true_class: int) -> AttackResult:
    if config.kind == "fgsm":
        return fgsm(model_fn, image, true_class, config.epsilon)
    if config.kind == "deepfool":
        return deepfool(model_fn, image, true_class, config.iterations, config.overshoot)
    return cw_l2(model_fn, image, true_class, config.c, config.k, config.iterations, config.lr)


def _attack_one(args):
    config, model_fn, image, label = args
    try:
        return run_attack(config, model_fn, image, label)
    except (NumericError, FloatingPointError) as exc:
        log.warning("attack failed on one image: %s", exc)
        zero = np.zeros_like(image)
        return AttackResult(image.copy(), zero, int(label), False, 0, error=str(exc))


def attack_batch(config: AttackConfig, model_fn, dataset, workers: int = 1) -> list[AttackResult]:
    """Attack every image of ``dataset`` in order.

    Per-image numeric failures become records with ``error`` set instead of
    aborting the batch.  Each image depends only on its own inputs, so the
    output is identical for any ``workers`` count; ``workers > 1`` needs a
    picklable ``model_fn``.
    """
    jobs = [(config, model_fn, dataset.images[i], int(dataset.labels[i])) for i in range(len(dataset))]
    if workers <= 1 or len(jobs) < 2:
        return [_attack_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_attack_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
