import json
import logging
import math
from pathlib import Path
from typing import Any

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"


def totals(layers: list[dict]) -> dict[str, Any]:
    pruned = [layer for layer in layers if layer["pruned"]]
    ratios = [layer["ratio"] for layer in pruned]
    params = sum(layer["parameters"] for layer in pruned)
    zeros = sum(layer["sparsity_achieved"] * layer["parameters"] for layer in pruned)
    if not ratios:
        geomean = 1.0
    elif min(ratios) <= 0.0:
        geomean = 0.0
    else:
        geomean = math.exp(sum(math.log(r) for r in ratios) / len(ratios))
    return {
        "layers": len(layers),
        "pruned_layers": len(pruned),
        "skipped_layers": sum(layer["skipped"] for layer in pruned),
        "improved_layers": sum(r < 1.0 for r in ratios),
        "geomean_ratio": geomean,
        "mean_converged_fraction": (
            sum(layer["converged_fraction"] for layer in pruned) / len(pruned) if pruned else 1.0
        ),
        "sparsity": zeros / params if params else 0.0,
    }


def build_report(layers: list[dict], config: dict) -> dict:
    return {"layers": layers, "config": config, "totals": totals(layers)}


def save_report(report: dict, output_path) -> None:
    Path(output_path).write_text(json.dumps(report, indent=2) + "\n")
    logger.info("Report saved to: %s", output_path)


def load_report(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_FILE
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise FileNotFoundError(f"Report not found: {path}")


def _status(layer: dict) -> str:
    if not layer["pruned"]:
        return "dense"
    if layer["skipped"]:
        return "skipped"
    if layer.get("ratio_note"):
        return layer["ratio_note"]
    return "updated"


def print_summary(report: dict) -> None:
    """Print the per-layer table (name, error ratio, status) and run totals."""
    layers = report["layers"]
    width = max([len("layer")] + [len(layer["name"]) for layer in layers])
    print("=" * 70)
    print("PRUNING SUMMARY")
    print("=" * 70)
    print(f"{'layer':<{width}}  {'ratio':>8}  {'converged':>9}  {'iters p50/p95':>13}  status")
    print("-" * 70)
    for layer in layers:
        iters = f"{layer['iterations_p50']}/{layer['iterations_p95']}"
        print(
            f"{layer['name']:<{width}}  {layer['ratio']:>8.4f}  "
            f"{layer['converged_fraction']:>9.1%}  {iters:>13}  {_status(layer)}"
        )
        if layer["skipped"] and layer.get("skip_reason"):
            print(f"{'':<{width}}  -> {layer['skip_reason']}")
    print("-" * 70)
    t = report["totals"]
    print(
        f"Layers: {t['layers']}  |  Pruned: {t['pruned_layers']}  |  Skipped: {t['skipped_layers']}  "
        f"|  Improved: {t['improved_layers']}"
    )
    print(f"Geometric-mean error ratio: {t['geomean_ratio']:.4f}  |  Sparsity: {t['sparsity']:.2%}")
    print("=" * 70)
