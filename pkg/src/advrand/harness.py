"""Attack scenarios, diagnostics and scoring for the randomization defense.

Scenarios differ only in the *target* the attacker differentiates through:

* vanilla: the bare network;
* single pattern: the network behind one fixed resize+pad pattern;
* ensemble pattern: the network behind several fixed patterns, with the
  attack objective averaged over them.

The *defense* always classifies the resulting adversarial images through
freshly sampled random patterns.
"""

from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import classifier
from .attacks import AttackConfig, AttackResult, attack_batch
from .classifier import ModelWeights, forward_logits
from .data import LabeledDataset
from .defense import (
    PatternSpec,
    RandomizationParams,
    apply_patterns,
    count_patterns,
    randomized_predict,
)
from .errors import ContractError
from .tensor import Tensor, resize_bilinear

log = logging.getLogger(__name__)

SCENARIOS = ("vanilla", "single", "ensemble", "one_pixel_pad", "one_pixel_resize")


# ---------------------------------------------------------------- targets


@dataclass(frozen=True, eq=False)
class VanillaTarget:
    """The bare network.  Picklable, so it can cross process boundaries."""

    weights: ModelWeights
    n_patterns = 1

    def __call__(self, x: Tensor) -> Tensor:
        return forward_logits(self.weights, x)


@dataclass(frozen=True, eq=False)
class PatternTarget:
    """The network behind a fixed list of patterns; logits are ``(P, C)``."""

    weights: ModelWeights
    patterns: tuple[PatternSpec, ...]
    target_side: int

    @property
    def n_patterns(self) -> int:
        return len(self.patterns)

    def __call__(self, x: Tensor) -> Tensor:
        return forward_logits(self.weights, apply_patterns(x, self.patterns, self.target_side))


def make_vanilla_target(weights: ModelWeights) -> VanillaTarget:
    return VanillaTarget(weights)


def centered_pattern(base_side: int, target: int) -> PatternSpec:
    """No resize, equal zero padding on all four sides."""
    if (target - base_side) % 2:
        raise ContractError(
            f"cannot centre {base_side} in {target}: odd margin; give explicit offsets"
        )
    off = (target - base_side) // 2
    return PatternSpec(base_side, off, off)


def make_single_pattern_target(
    weights: ModelWeights, pattern: PatternSpec | None = None, target: int = 36,
) -> PatternTarget:
    if pattern is None:
        pattern = centered_pattern(weights.arch.input_side, target)
    if not pattern.fits(target):
        raise ContractError(f"{pattern} does not fit {target}")
    return PatternTarget(weights, (pattern,), target)


def make_ensemble_pattern_target(weights: ModelWeights, patterns, target: int) -> PatternTarget:
    patterns = tuple(patterns)
    if not patterns:
        raise ContractError("an ensemble needs at least one pattern")
    return PatternTarget(weights, patterns, target)


def ensemble_scales(resize_min: int, target: int, n: int = 5) -> list[int]:
    """``n`` evenly spaced integer sides from ``resize_min`` to ``target`` inclusive."""
    return [int(round(v)) for v in np.linspace(resize_min, target, n)]


def placement_patterns(side: int, target: int, where=("tl", "tr", "bl", "br", "c")) -> list[PatternSpec]:
    m = target - side
    spots = {"tl": (0, 0), "tr": (m, 0), "bl": (0, m), "br": (m, m), "c": (m // 2, m // 2)}
    return [PatternSpec(side, *spots[w]) for w in where]


def default_ensemble(params: RandomizationParams, n_scales: int = 5) -> list[PatternSpec]:
    """Five scales times five placements, duplicates removed (21 at the usual sizes)."""
    out: list[PatternSpec] = []
    for side in ensemble_scales(params.resize_min, params.pad_target, n_scales):
        for p in placement_patterns(side, params.pad_target):
            if p not in out:
                out.append(p)
    return out


def ensemble_target_accuracy(model_fn, results: list[AttackResult]) -> float:
    """Correct (image, pattern) pairs over ``n_images * n_patterns``."""
    if not isinstance(model_fn, PatternTarget):
        raise ContractError("ensemble_target_accuracy needs a pattern target")
    if not results:
        return float("nan")
    correct = sum(_target_correct(model_fn, r.adversarial, r.true_class) for r in results)
    return correct / (len(results) * model_fn.n_patterns)


def _target_correct(model_fn, image: np.ndarray, label: int) -> int:
    z = model_fn(Tensor(image)).data
    z = z.reshape(1, -1) if z.ndim == 1 else z
    return int(np.sum(np.argmax(z, axis=1) == label))


# ---------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "vanilla"
    fixed_pattern: PatternSpec | None = None
    pattern_set: tuple[PatternSpec, ...] | None = None
    defense_runs: int = 3

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ContractError(f"unknown scenario {self.kind!r}")
        if self.defense_runs < 1:
            raise ContractError("defense_runs must be positive")
        if self.kind == "ensemble" and self.pattern_set is not None and not self.pattern_set:
            raise ContractError("ensemble scenario needs a non-empty pattern set")

    @property
    def label(self) -> str:
        return {
            "vanilla": "Vanilla", "single": "SinglePattern", "ensemble": "EnsemblePattern",
            "one_pixel_pad": "OnePixelPad", "one_pixel_resize": "OnePixelResize",
        }[self.kind]


@dataclass
class ScenarioReport:
    model: str
    attack: str
    scenario: str
    target_accuracy: float
    defense_accuracy_mean: float
    defense_accuracy_runs: list[float]
    n_images: int
    # per-run, per-image 0/1 defense outcomes; input to normalized_score
    defense_correct: list[list[int]] = field(default_factory=list)
    n_patterns: int = 1
    failures: int = 0
    timing: float = 0.0
    config: dict = field(default_factory=dict)

    def to_dict(self, with_timing: bool = False) -> dict:
        out = {
            "model": self.model, "attack": self.attack, "scenario": self.scenario,
            "target_accuracy": self.target_accuracy,
            "defense_accuracy_mean": self.defense_accuracy_mean,
            "defense_accuracy_runs": list(self.defense_accuracy_runs),
            "n_images": self.n_images, "n_patterns": self.n_patterns,
            "failures": self.failures, "defense_correct": self.defense_correct,
            "config": self.config,
        }
        if with_timing:
            out["timing"] = self.timing
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioReport":
        keys = (
            "model", "attack", "scenario", "target_accuracy", "defense_accuracy_mean",
            "defense_accuracy_runs", "n_images", "defense_correct", "n_patterns", "failures",
            "config",
        )
        kw = {k: d[k] for k in keys if k in d}
        return cls(**kw, timing=d.get("timing", 0.0))


def image_rng(master_seed: int, image_index: int, run_index: int, scenario_id: str) -> np.random.Generator:
    """Independent stream per (seed, image, run, scenario); order of work is irrelevant."""
    tag = int.from_bytes(hashlib.sha256(scenario_id.encode()).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([master_seed, image_index, run_index, tag]))


def build_target(weights: ModelWeights, scenario: ScenarioSpec, params: RandomizationParams):
    t = params.pad_target
    if scenario.kind == "vanilla":
        return make_vanilla_target(weights)
    if scenario.kind == "single":
        return make_single_pattern_target(weights, scenario.fixed_pattern, t)
    if scenario.kind == "ensemble":
        patterns = scenario.pattern_set or tuple(default_ensemble(params))
        return make_ensemble_pattern_target(weights, patterns, t)
    raise ContractError(f"{scenario.kind} targets are built by the diagnostic runners")


def _defense_job(args):
    weights, images, labels, params, n_iter, runs, seed, sid, offset = args
    out = np.zeros((runs, len(images)), dtype=np.int64)
    for i in range(len(images)):
        for r in range(runs):
            pred, _ = randomized_predict(
                weights, images[i], params, n_iter, image_rng(seed, offset + i, r, sid)
            )
            out[r, i] = int(pred == labels[i])
    return out


def evaluate_defense(
    weights: ModelWeights,
    images: np.ndarray,
    labels: np.ndarray,
    params: RandomizationParams,
    runs: int,
    master_seed: int,
    scenario_id: str,
    n_iterations: int = 1,
    workers: int = 1,
) -> np.ndarray:
    """``(runs, n)`` array of 0/1 outcomes of the randomized defense."""
    n = len(images)
    if n == 0:
        return np.zeros((runs, 0), dtype=np.int64)
    if workers <= 1:
        return _defense_job((weights, images, labels, params, n_iterations, runs, master_seed, scenario_id, 0))
    bounds = np.linspace(0, n, min(n, workers * 4) + 1).astype(int)
    jobs = [
        (weights, images[a:b], labels[a:b], params, n_iterations, runs, master_seed, scenario_id, a)
        for a, b in zip(bounds[:-1], bounds[1:]) if b > a
    ]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(_defense_job, jobs)), axis=1)


def _deterministic_defense(weights, images, labels, pattern: PatternSpec, target: int) -> np.ndarray:
    canvases = np.stack([apply_patterns(im, [pattern], target).data[0] for im in images]) if len(images) else None
    if canvases is None:
        return np.zeros((1, 0), dtype=np.int64)
    return (classifier.predict(weights, canvases) == labels).astype(np.int64)[None, :]


def _report(weights, attack, scenario_label, target_acc, outcomes, n, n_patterns, failures, t0, config):
    runs = [float(v) for v in outcomes.mean(axis=1)] if n else [float("nan")] * len(outcomes)
    return ScenarioReport(
        model=weights.meta.get("name", weights.arch.fingerprint()),
        attack=attack.name,
        scenario=scenario_label,
        target_accuracy=float(target_acc),
        defense_accuracy_mean=float(np.mean(runs)),
        defense_accuracy_runs=runs,
        n_images=n,
        defense_correct=outcomes.astype(int).tolist(),
        n_patterns=n_patterns,
        failures=failures,
        timing=time.perf_counter() - t0,
        config=config,
    )


def _target_accuracy(target, results) -> float:
    if not results:
        return float("nan")
    if isinstance(target, PatternTarget):
        return ensemble_target_accuracy(target, results)
    return float(np.mean([_target_correct(target, r.adversarial, r.true_class) for r in results]))


def run_scenario(
    weights: ModelWeights,
    scenario: ScenarioSpec,
    attack: AttackConfig,
    dataset: LabeledDataset,
    defense_params: RandomizationParams,
    master_seed: int,
    n_iterations: int = 1,
    workers: int = 1,
    results: list[AttackResult] | None = None,
) -> ScenarioReport:
    """Attack every image through the scenario's target, then score target and defense.

    ``results`` may carry precomputed attack outputs for this exact
    (weights, scenario, attack, dataset) combination.
    """
    t0 = time.perf_counter()
    target = build_target(weights, scenario, defense_params)
    if results is None:
        results = attack_batch(attack, target, dataset, workers)
    adv = np.stack([r.adversarial for r in results]) if results else dataset.images[:0]
    outcomes = evaluate_defense(
        weights, adv, dataset.labels, defense_params, scenario.defense_runs, master_seed,
        scenario.label, n_iterations, workers,
    )
    config = {
        "scenario": scenario.label, "attack": attack.to_dict(), "defense": defense_params.to_dict(),
        "defense_runs": scenario.defense_runs, "n_iterations": n_iterations,
        "master_seed": master_seed, "n_patterns": getattr(target, "n_patterns", 1),
    }
    # sweep rows are told apart by an "@n" suffix since the table columns are fixed
    label = scenario.label if n_iterations == 1 else f"{scenario.label}@{n_iterations}"
    return _report(
        weights, attack, label, _target_accuracy(target, results), outcomes, len(dataset),
        target.n_patterns, sum(r.error is not None for r in results), t0, config,
    )


def resize_images(dataset: LabeledDataset, side: int) -> LabeledDataset:
    """Bilinearly resize every image to ``side x side``."""
    if dataset.side == side:
        return dataset
    images = resize_bilinear(Tensor(dataset.images), side).data if len(dataset) else (
        np.zeros((0, side, side, dataset.channels))
    )
    return LabeledDataset(np.clip(images, 0.0, 1.0), dataset.labels, dataset.split, dataset.num_classes,
                          dict(dataset.meta, resized_to=side))


def _check_side(dataset: LabeledDataset, side: int):
    if len(dataset) and dataset.side != side:
        raise ContractError(f"diagnostic expects images of side {side}, got {dataset.side}; see resize_images")


def one_pixel_pad_params(target: int) -> RandomizationParams:
    return RandomizationParams(target - 1, target - 1, target, target)


def one_pixel_resize_params(target: int) -> RandomizationParams:
    return RandomizationParams(target - 1, target, target + 1, target)


def run_diagnostic_one_pixel_pad(
    weights: ModelWeights, attack: AttackConfig, dataset: LabeledDataset, master_seed: int,
    target: int = 36, workers: int = 1,
) -> ScenarioReport:
    """Attack three one-pixel placements jointly, defend with the fourth."""
    t0 = time.perf_counter()
    side = target - 1
    _check_side(dataset, side)
    tl, tr, bl, br = placement_patterns(side, target, ("tl", "tr", "bl", "br"))
    model_fn = make_ensemble_pattern_target(weights, (tl, tr, bl), target)
    results = attack_batch(attack, model_fn, dataset, workers)
    adv = np.stack([r.adversarial for r in results]) if results else dataset.images
    outcomes = _deterministic_defense(weights, adv, dataset.labels, br, target)
    config = {
        "scenario": "OnePixelPad", "attack": attack.to_dict(), "pad_target": target,
        "pattern_space": count_patterns(one_pixel_pad_params(target)), "master_seed": master_seed,
    }
    return _report(weights, attack, "OnePixelPad", _target_accuracy(model_fn, results), outcomes,
                   len(dataset), 3, sum(r.error is not None for r in results), t0, config)


def run_diagnostic_one_pixel_resize(
    weights: ModelWeights, attack: AttackConfig, dataset: LabeledDataset, master_seed: int,
    target: int = 36, workers: int = 1,
) -> ScenarioReport:
    """Attack the bare network at side ``target - 1``, defend by resizing to ``target``."""
    t0 = time.perf_counter()
    _check_side(dataset, target - 1)
    model_fn = make_vanilla_target(weights)
    results = attack_batch(attack, model_fn, dataset, workers)
    adv = np.stack([r.adversarial for r in results]) if results else dataset.images
    outcomes = _deterministic_defense(weights, adv, dataset.labels, PatternSpec(target, 0, 0), target)
    config = {
        "scenario": "OnePixelResize", "attack": attack.to_dict(), "pad_target": target,
        "pattern_space": count_patterns(one_pixel_resize_params(target)), "master_seed": master_seed,
    }
    return _report(weights, attack, "OnePixelResize", _target_accuracy(model_fn, results), outcomes,
                   len(dataset), 1, sum(r.error is not None for r in results), t0, config)


# ---------------------------------------------------------------- scoring


def normalized_score(correctness) -> float:
    """Correct defense decisions over the total number of adversarial examples.

    ``correctness`` holds one entry per attack: a 0/1 vector over images,
    or a ``(runs, n)`` matrix whose runs are averaged per image first.
    """
    total, m = 0.0, 0
    for entry in correctness:
        a = np.asarray(entry, dtype=np.float64)
        if a.ndim == 2:
            a = a.mean(axis=0)
        if a.ndim != 1:
            raise ContractError("each attack needs a vector or (runs, n) matrix of outcomes")
        if np.any((a < 0) | (a > 1)):
            raise ContractError("outcomes must lie in [0, 1]")
        total += float(a.sum())
        m += a.size
    if m == 0:
        raise ContractError("no adversarial examples to score")
    return total / m


def score_reports(reports) -> float:
    return normalized_score([r.defense_correct for r in reports])
