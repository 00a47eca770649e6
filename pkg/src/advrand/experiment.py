"""End-to-end pipeline steps shared by the command line and the test suite."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import fileio
from .attacks import AttackConfig, AttackResult, attack_batch
from .classifier import ModelWeights, adversarial_train, init_model, select_correct_subset, train
from .config import ExperimentConfig
from .data import LabeledDataset, make_synthetic
from .harness import (
    ScenarioReport,
    ScenarioSpec,
    build_target,
    resize_images,
    run_diagnostic_one_pixel_pad,
    run_diagnostic_one_pixel_resize,
    run_scenario,
)

log = logging.getLogger(__name__)


def make_data(cfg: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    d = cfg.data
    return make_synthetic(d.n_train, d.n_test, d.side, d.channels, d.seed)


def load_data(cfg: ExperimentConfig, data_dir=None) -> tuple[LabeledDataset, LabeledDataset]:
    """Train and test splits from ``data_dir`` (``train.rast``/``test.rast``) or generated."""
    if data_dir is None and cfg.data.source == "synthetic":
        return make_data(cfg)
    root = Path(data_dir if data_dir is not None else cfg.data.source)
    return fileio.load_raster(root / "train.rast"), fileio.load_raster(root / "test.rast")


def train_model(cfg: ExperimentConfig, train_set: LabeledDataset, adversarial: bool | None = None,
                name: str | None = None) -> ModelWeights:
    m = cfg.model
    adversarial = m.adversarial if adversarial is None else adversarial
    arch = m.arch(train_set.side, train_set.channels, train_set.num_classes)
    w = init_model(arch, m.init_seed)
    scale = (m.scale_min, m.scale_max_exclusive) if m.scale_max_exclusive > m.scale_min + 1 else None
    bright = m.brightness / 255.0 if m.brightness else None
    if adversarial:
        eps = [e / 255.0 for e in m.epsilons]
        w = adversarial_train(w, train_set, m.epochs, m.lr, m.batch_size, eps, m.mix_fraction,
                              m.train_seed, m.momentum, scale_range=scale, brightness=bright)
    else:
        w = train(w, train_set, m.epochs, m.lr, m.batch_size, m.train_seed, m.momentum,
                  scale_range=scale, brightness=bright)
    w.meta["name"] = name or ("adv" if adversarial else "plain")
    return w


def correct_subset(cfg: ExperimentConfig, models: list[ModelWeights], test: LabeledDataset,
                   n: int | None = None) -> LabeledDataset:
    return select_correct_subset(models, test, cfg.evaluate.n_images if n is None else n,
                                 cfg.evaluate.subset_seed)


class AttackCache:
    """Adversarial images on disk, keyed by model, attack, target and dataset hashes.

    ``root=None`` disables the cache.
    """

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(weights: ModelWeights, attack: AttackConfig, target_id: str, dataset: LabeledDataset) -> str:
        return fileio.config_hash({
            "weights": fileio.weights_hash(weights), "attack": attack.to_dict(),
            "target": target_id, "dataset": fileio.dataset_hash(dataset),
        })[:32]

    def get(self, key: str, dataset: LabeledDataset) -> list[AttackResult] | None:
        if self.root is None:
            return None
        path = self.root / f"{key}.rast"
        if not path.is_file():
            return None
        adv = fileio.load_raster(path)
        meta = adv.meta
        return [
            AttackResult(adv.images[i], adv.images[i] - dataset.images[i], int(dataset.labels[i]),
                         bool(meta["success"][i]), int(meta["iterations"][i]), meta["errors"][i])
            for i in range(len(dataset))
        ]

    def put(self, key: str, dataset: LabeledDataset, results: list[AttackResult]) -> None:
        if self.root is None:
            return
        images = np.stack([r.adversarial for r in results]) if results else dataset.images
        adv = LabeledDataset(images, dataset.labels, "adversarial", dataset.num_classes)
        meta = {
            "success": [bool(r.success) for r in results],
            "iterations": [int(r.iterations_used) for r in results],
            "errors": [r.error for r in results],
        }
        fileio.save_raster(self.root / f"{key}.rast", adv, "f64le", meta=meta)


def cached_attack(cache: AttackCache, weights, attack, target, target_id, dataset, workers=1):
    key = AttackCache.key(weights, attack, target_id, dataset)
    results = cache.get(key, dataset)
    if results is None:
        results = attack_batch(attack, target, dataset, workers)
        cache.put(key, dataset, results)
    return results


def evaluate_grid(cfg: ExperimentConfig, models: list[ModelWeights], subset: LabeledDataset,
                  cache: AttackCache | None = None, workers: int = 1) -> list[ScenarioReport]:
    """Every (model, scenario, attack) cell, plus the iteration sweep if configured."""
    cache = cache or AttackCache(None)
    params = cfg.randomization()
    ev = cfg.evaluate
    sweep = cfg.defense.sweep or (cfg.defense.n_iterations,)
    reports = []
    for weights in models:
        for kind in ev.scenarios:
            scenario = ScenarioSpec(kind, defense_runs=ev.defense_runs)
            data = subset
            if kind == "ensemble" and ev.ensemble_images < len(subset):
                data = subset.subset(range(ev.ensemble_images))
            target = build_target(weights, scenario, params)
            for attack in cfg.attack_configs():
                results = cached_attack(cache, weights, attack, target, scenario.label, data, workers)
                for n_iter in sweep:
                    rep = run_scenario(weights, scenario, attack, data, params, cfg.master_seed,
                                       n_iter, workers, results)
                    rep.config["experiment"] = cfg.to_dict()
                    reports.append(rep)
                    log.info("%s %s %s n_iter=%d target %.3f defense %.3f", rep.model, rep.attack,
                             rep.scenario, n_iter, rep.target_accuracy, rep.defense_accuracy_mean)
    return reports


def diagnose(cfg: ExperimentConfig, weights: ModelWeights, subset: LabeledDataset,
             workers: int = 1) -> list[ScenarioReport]:
    """One-pixel padding and one-pixel resizing runs for each diagnostic attack."""
    t = cfg.defense.pad_target
    small = resize_images(subset, t - 1)
    reports = []
    for name in cfg.evaluate.diagnose_attacks:
        attack = cfg.attack(name)
        for runner in (run_diagnostic_one_pixel_pad, run_diagnostic_one_pixel_resize):
            rep = runner(weights, attack, small, cfg.master_seed, t, workers)
            rep.config["experiment"] = cfg.to_dict()
            reports.append(rep)
    return reports
