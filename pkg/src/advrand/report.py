"""Table and plot-data rendering for scenario reports.

CSV columns, in this fixed order::

    model, attack, scenario, target_acc, defense_acc_mean, defense_acc_runs, n_images

Accuracies are percentages with one decimal; ``defense_acc_runs`` joins the
per-run values with ``;``.  The JSON rendering keeps raw fractions and the
full configuration.
"""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict

from .errors import ContractError
from .harness import ScenarioReport

CSV_COLUMNS = (
    "model", "attack", "scenario", "target_acc", "defense_acc_mean", "defense_acc_runs", "n_images",
)


def pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


def table_csv(reports: list[ScenarioReport]) -> str:
    if not reports:
        raise ContractError("no reports to tabulate")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([
            r.model, r.attack, r.scenario, pct(r.target_accuracy), pct(r.defense_accuracy_mean),
            ";".join(pct(v) for v in r.defense_accuracy_runs), r.n_images,
        ])
    return buf.getvalue()


def table_json(reports: list[ScenarioReport], config: dict | None = None) -> str:
    if not reports:
        raise ContractError("no reports to tabulate")
    doc = {"config": config or {}, "reports": [r.to_dict() for r in reports]}
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def emit_table(reports: list[ScenarioReport], config: dict | None = None) -> tuple[str, str]:
    """CSV and JSON renderings of ``reports``."""
    return table_csv(reports), table_json(reports, config)


def read_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    for row in rows:
        for k in ("target_acc", "defense_acc_mean"):
            row[k] = float(row[k])
        row["defense_acc_runs"] = [float(v) for v in row["defense_acc_runs"].split(";") if v]
        row["n_images"] = int(row["n_images"])
    return rows


def load_reports(text: str) -> tuple[list[ScenarioReport], dict]:
    doc = json.loads(text)
    return [ScenarioReport.from_dict(d) for d in doc["reports"]], doc.get("config", {})


def sweep_series(reports: list[ScenarioReport]) -> dict[str, list[tuple[int, float]]]:
    """Defense accuracy (percent) against the number of averaged patterns.

    Reports are grouped by model, attack and scenario; groups with a single
    iteration count are skipped.
    """
    groups = defaultdict(dict)
    for r in reports:
        n_iter = int(r.config.get("n_iterations", 1))
        base = r.config.get("scenario", r.scenario)
        groups[(r.model, r.attack, base)][n_iter] = 100.0 * r.defense_accuracy_mean
    out = {}
    for (model, attack, scenario), points in sorted(groups.items()):
        if len(points) > 1:
            out[f"{model}_{attack}_{scenario}"] = sorted(points.items())
    return out


def plot_data(points) -> str:
    """Two-column whitespace-separated text: ``x y`` per line."""
    return "".join(f"{x} {y:.6f}\n" for x, y in points)


def safe_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)
