"""Command-line entry point: ``advrand <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error (including missing files), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment, fileio, report
from .config import ExperimentConfig, load_config
from .errors import ConfigError, ContractError, DimensionError, FormatError, NumericError
from .harness import score_reports

log = logging.getLogger("advrand")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _read_reports(paths):
    reports, config = [], {}
    for p in paths:
        p = Path(p)
        if not p.is_file():
            raise FileNotFoundError(f"report file not found: {p}")
        try:
            more, cfg = report.load_reports(p.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{p}: not a report file ({exc})") from exc
        reports += more
        config = config or cfg
    return reports, config


def _models(paths):
    return [fileio.load_weights(p) for p in paths]


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = experiment.make_data(cfg)
    meta = {"config": cfg.to_dict()}
    fileio.save_raster(out / "train.rast", train, meta=meta)
    fileio.save_raster(out / "test.rast", test, meta=meta)
    print(f"wrote {len(train)} train and {len(test)} test images to {out}")


def cmd_train(args, cfg):
    train, _ = experiment.load_data(cfg, args.data)
    w = experiment.train_model(cfg, train, args.adversarial or None, args.name)
    w.meta["config"] = cfg.to_dict()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    fileio.save_weights(args.out, w)
    print(f"wrote {w.meta['name']} weights ({w.arch.fingerprint()}) to {args.out}")


def cmd_attack(args, cfg):
    from .harness import ScenarioSpec, build_target

    models = _models(args.weights)
    _, test = experiment.load_data(cfg, args.data)
    subset = experiment.correct_subset(cfg, models, test, args.n_images)
    cache = experiment.AttackCache(args.cache)
    attack = cfg.attack(args.attack)
    scenario = ScenarioSpec(args.scenario)
    for w in models:
        target = build_target(w, scenario, cfg.randomization())
        experiment.cached_attack(cache, w, attack, target, scenario.label, subset, args.workers)
        key = experiment.AttackCache.key(w, attack, scenario.label, subset)
        print(f"{w.meta.get('name', '?')} {attack.name} {scenario.label}: {Path(args.cache) / key}.rast")


def cmd_evaluate(args, cfg):
    models = _models(args.weights)
    _, test = experiment.load_data(cfg, args.data)
    subset = experiment.correct_subset(cfg, models, test, args.n_images)
    cache = experiment.AttackCache(args.cache)
    reports = experiment.evaluate_grid(cfg, models, subset, cache, args.workers)
    out = Path(args.out)
    _write(out / "reports.json", report.table_json(reports, cfg.to_dict()))
    print(report.table_csv(reports), end="")


def cmd_diagnose(args, cfg):
    models = _models(args.weights)
    _, test = experiment.load_data(cfg, args.data)
    subset = experiment.correct_subset(cfg, models, test, args.n_images)
    reports = []
    for w in models:
        reports += experiment.diagnose(cfg, w, subset, args.workers)
    _write(Path(args.out) / "diagnose.json", report.table_json(reports, cfg.to_dict()))
    print(report.table_csv(reports), end="")


def cmd_score(args, cfg):
    reports, _ = _read_reports(args.reports)
    print(f"{score_reports(reports):.6f}")


def cmd_report(args, cfg):
    reports, config = _read_reports(args.reports)
    out = Path(args.out)
    csv_text, json_text = report.emit_table(reports, config)
    _write(out / "table.csv", csv_text)
    _write(out / "table.json", json_text)
    for name, points in report.sweep_series(reports).items():
        _write(out / f"sweep_{report.safe_name(name)}.dat", report.plot_data(points))
    print(csv_text, end="")


def cmd_repro(args, cfg):
    """Data, plain and adversarially trained models, scenario grid, diagnostics, tables, score."""
    out = Path(args.out)
    train, test = experiment.load_data(cfg, args.data)
    models = []
    for adv, name in ((False, "plain"), (True, "adv")):
        path = out / f"{name}.wgt"
        if path.is_file():
            w = fileio.load_weights(path)
        else:
            w = experiment.train_model(cfg, train, adv, name)
            w.meta["config"] = cfg.to_dict()
            fileio.save_weights(path, w)
        models.append(w)
    subset = experiment.correct_subset(cfg, models, test, args.n_images)
    reports = experiment.evaluate_grid(cfg, models, subset, experiment.AttackCache(out / "cache"),
                                       args.workers)
    diag = []
    for w in models:
        diag += experiment.diagnose(cfg, w, subset, args.workers)
    _write(out / "reports.json", report.table_json(reports, cfg.to_dict()))
    _write(out / "diagnose.json", report.table_json(diag, cfg.to_dict()))
    csv_text, json_text = report.emit_table(reports + diag, cfg.to_dict())
    _write(out / "table.csv", csv_text)
    _write(out / "table.json", json_text)
    for name, points in report.sweep_series(reports).items():
        _write(out / f"sweep_{report.safe_name(name)}.dat", report.plot_data(points))
    print(csv_text, end="")
    print(f"score {score_reports(reports):.6f}")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="override experiment.master_seed")
    common.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="advrand", description="Randomized resize-and-pad defense toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset")
    s.add_argument("--out", required=True, help="directory for train.rast and test.rast")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train a model and write a weight file")
    s.add_argument("--data", help="dataset directory (default: generate from config)")
    s.add_argument("--out", required=True, help="weight file to write")
    s.add_argument("--adversarial", action="store_true", help="mix FGSM examples into every batch")
    s.add_argument("--name", help="model id used in reports")
    s.set_defaults(func=cmd_train)

    def with_models(s):
        s.add_argument("--weights", nargs="+", required=True, help="weight files")
        s.add_argument("--data", help="dataset directory (default: generate from config)")
        s.add_argument("--n-images", type=int, help="override evaluate.n_images")

    s = sub.add_parser("attack", parents=[common], help="materialize adversarial examples in the cache")
    with_models(s)
    s.add_argument("--attack", required=True, help="fgsm-<eps>, deepfool or cw")
    s.add_argument("--scenario", default="vanilla", choices=("vanilla", "single", "ensemble"))
    s.add_argument("--cache", required=True, help="cache directory")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("evaluate", parents=[common], help="run the scenario grid")
    with_models(s)
    s.add_argument("--out", required=True, help="directory for reports.json")
    s.add_argument("--cache", help="adversarial example cache directory")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("diagnose", parents=[common], help="one-pixel padding and resizing runs")
    with_models(s)
    s.add_argument("--out", required=True, help="directory for diagnose.json")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("score", parents=[common], help="normalized score over report files")
    s.add_argument("reports", nargs="+")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("report", parents=[common], help="CSV/JSON tables and sweep plot data")
    s.add_argument("reports", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("repro", parents=[common], help="run the whole pipeline")
    s.add_argument("--data", help="dataset directory (default: generate from config)")
    s.add_argument("--out", required=True)
    s.add_argument("--n-images", type=int, help="override evaluate.n_images")
    s.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        cfg = _config(args)
        args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"advrand: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ContractError, DimensionError, FileNotFoundError) as exc:
        print(f"advrand: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"advrand: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
