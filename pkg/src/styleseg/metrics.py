"""Dice and average surface distance, plus split-level report generation.

ASD conventions (recorded, the published table defines none): boundaries
are foreground voxels with at least one face-adjacent non-foreground
neighbor; the image frame does not count as a neighbor. The default mode
extracts boundaries per 2D slice and measures in-plane distances; each
direction's distances are pooled into one symmetric mean. A slice whose
counterpart set is empty falls back to the in-plane projection of the
pooled opposite boundary. Dice of two empty sets is 1.0 by convention.
ASD is None ("N/A" in tables) whenever either boundary set is empty.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion, generate_binary_structure
from scipy.spatial import cKDTree

from .datamodel import (
    CLASS_NAMES, FOREGROUND_CLASSES,
    DatasetManifest, LabelMap, load_labelmap,
)


class EvaluationError(Exception):
    pass


def dice(pred: LabelMap, gt: LabelMap, cls: int) -> float:
    if pred.shape != gt.shape:
        raise EvaluationError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    p = pred.labels == cls
    g = gt.labels == cls
    np_, ng = int(p.sum()), int(g.sum())
    if np_ + ng == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / (np_ + ng)


def _boundary(fg: np.ndarray, mode: str) -> np.ndarray:
    if not fg.any():
        return np.zeros_like(fg)
    if mode == "3d":
        st = generate_binary_structure(3, 1)
        return fg & ~binary_erosion(fg, st, border_value=1)
    st = generate_binary_structure(2, 1)
    out = np.zeros_like(fg)
    for s in range(fg.shape[0]):
        if fg[s].any():
            out[s] = fg[s] & ~binary_erosion(fg[s], st, border_value=1)
    return out


def _inplane_mm(coords_rc: np.ndarray, spacing) -> np.ndarray:
    return coords_rc * np.array([spacing[0], spacing[1]])


def _directed_2d(src: np.ndarray, dst: np.ndarray, dst_pooled: np.ndarray,
                 spacing) -> list[float]:
    """In-plane nearest distances from every src boundary voxel, per slice."""
    dists: list[float] = []
    pooled_tree = None
    slices = np.unique(src[:, 0])
    for s in slices:
        pts = _inplane_mm(src[src[:, 0] == s][:, 1:].astype(float), spacing)
        dst_s = dst[dst[:, 0] == s]
        if len(dst_s):
            tree = cKDTree(_inplane_mm(dst_s[:, 1:].astype(float), spacing))
        else:
            if pooled_tree is None:
                pooled_tree = cKDTree(_inplane_mm(dst_pooled[:, 1:].astype(float), spacing))
            tree = pooled_tree
        dists.extend(tree.query(pts)[0].tolist())
    return dists


def asd(pred: LabelMap, gt: LabelMap, cls: int, spacing,
        boundary_mode: str = "2d") -> float | None:
    """Symmetric mean boundary distance in mm, or None when undefined."""
    if pred.shape != gt.shape:
        raise EvaluationError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    pb = _boundary(pred.labels == cls, boundary_mode)
    gb = _boundary(gt.labels == cls, boundary_mode)
    if not pb.any() or not gb.any():
        return None
    p_idx = np.argwhere(pb)
    g_idx = np.argwhere(gb)
    if boundary_mode == "3d":
        scale = np.array([spacing[2], spacing[0], spacing[1]])
        pt = cKDTree(p_idx * scale)
        gt_ = cKDTree(g_idx * scale)
        d = np.concatenate([gt_.query(p_idx * scale)[0], pt.query(g_idx * scale)[0]])
        return float(d.mean())
    d = _directed_2d(p_idx, g_idx, g_idx, spacing) + _directed_2d(g_idx, p_idx, p_idx, spacing)
    return float(np.mean(d))


@dataclass
class CaseResult:
    case_id: str
    dice: dict[int, float]          # foreground class -> Dice
    asd_mm: dict[int, float | None]  # foreground class -> ASD or None

    def mean_dice(self) -> float:
        return float(np.mean([self.dice[c] for c in FOREGROUND_CLASSES]))


def evaluate_case(pred: LabelMap, gt: LabelMap, case_id: str, spacing,
                  boundary_mode: str = "2d") -> CaseResult:
    return CaseResult(
        case_id=case_id,
        dice={c: dice(pred, gt, c) for c in FOREGROUND_CLASSES},
        asd_mm={c: asd(pred, gt, c, spacing, boundary_mode) for c in FOREGROUND_CLASSES},
    )


def aggregate_results(results: list[CaseResult]) -> dict:
    """Class means plus the AVG over LV/MYO/RV; absent ASDs are excluded."""
    agg: dict = {"n_cases": len(results), "dice": {}, "asd_mm": {}, "asd_absent": {}}
    for c in FOREGROUND_CLASSES:
        agg["dice"][CLASS_NAMES[c]] = float(np.mean([r.dice[c] for r in results]))
        present = [r.asd_mm[c] for r in results if r.asd_mm[c] is not None]
        agg["asd_mm"][CLASS_NAMES[c]] = float(np.mean(present)) if present else None
        agg["asd_absent"][CLASS_NAMES[c]] = sum(r.asd_mm[c] is None for r in results)
    agg["dice"]["AVG"] = float(np.mean([agg["dice"][CLASS_NAMES[c]] for c in FOREGROUND_CLASSES]))
    asd_means = [agg["asd_mm"][CLASS_NAMES[c]] for c in FOREGROUND_CLASSES]
    agg["asd_mm"]["AVG"] = (
        float(np.mean([a for a in asd_means])) if all(a is not None for a in asd_means) else None
    )
    return agg


def write_case_csv(results: list[CaseResult], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["case_id", "class", "dice", "asd_mm"])
        for r in results:
            for c in FOREGROUND_CLASSES:
                a = r.asd_mm[c]
                w.writerow([
                    r.case_id, CLASS_NAMES[c], f"{r.dice[c]:.6f}",
                    "N/A" if a is None else f"{a:.6f}",
                ])


def evaluate_split(pred_dir, manifest: DatasetManifest, split: str, out_dir,
                   boundary_mode: str = "2d",
                   pred_suffix: str = ".lab") -> tuple[list[CaseResult], dict]:
    """Score every labelled case of `split` against predictions in `pred_dir`.

    Emits per-case CSV, aggregate CSV and plots into `out_dir`.
    """
    pred_dir = Path(pred_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [r for r in manifest.select(split=split) if r.labelled]
    if not records:
        raise EvaluationError(f"no labelled records in split {split!r}")
    results = []
    for rec in records:
        pred_path = pred_dir / f"{rec.case_id}{pred_suffix}"
        if not pred_path.exists():
            raise EvaluationError(f"missing prediction for case {rec.case_id}: {pred_path}")
        pred = load_labelmap(pred_path)
        gt = manifest.load_label(rec)
        spacing = manifest.load_image(rec).spacing
        results.append(evaluate_case(pred, gt, rec.case_id, spacing, boundary_mode))
    agg = aggregate_results(results)
    write_case_csv(results, out_dir / "cases.csv")
    _write_aggregate_csv({"": agg}, out_dir / "aggregate.csv")
    plot_results(results, agg, out_dir)
    return results, agg


def _write_aggregate_csv(method_aggs: dict[str, dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "metric", "LV", "MYO", "RV", "AVG"])
        for method, agg in method_aggs.items():
            w.writerow([method, "dice"] + [f"{agg['dice'][k]:.6f}" for k in ("LV", "MYO", "RV", "AVG")])
            row = [method, "asd_mm"]
            for k in ("LV", "MYO", "RV", "AVG"):
                v = agg["asd_mm"][k]
                row.append("N/A" if v is None else f"{v:.6f}")
            w.writerow(row)


def write_comparison_csv(method_aggs: dict[str, dict], path) -> None:
    """One Dice row and one ASD row per method (comparison-table layout)."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    _write_aggregate_csv(method_aggs, path)


def plot_results(results: list[CaseResult], agg: dict, out_dir) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    names = [CLASS_NAMES[c] for c in FOREGROUND_CLASSES]

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(names, [agg["dice"][n] for n in names], color="#4878cf")
    ax.set_ylim(0, 1)
    ax.set_ylabel("Dice")
    ax.set_title(f"mean Dice over {agg['n_cases']} cases")
    fig.tight_layout()
    fig.savefig(out_dir / "dice_bar.png", dpi=110)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.boxplot([[r.dice[c] for r in results] for c in FOREGROUND_CLASSES], tick_labels=names)
    ax.set_ylabel("Dice")
    ax.set_title("per-case Dice")
    fig.tight_layout()
    fig.savefig(out_dir / "dice_box.png", dpi=110)
    plt.close(fig)


def plot_comparison(method_aggs: dict[str, dict], out_dir) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    names = ["LV", "MYO", "RV", "AVG"]
    methods = list(method_aggs)
    x = np.arange(len(names))
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(6.5, 3.6))
    for i, m in enumerate(methods):
        ax.bar(x + i * width, [method_aggs[m]["dice"][n] for n in names], width, label=m)
    ax.set_xticks(x + width * (len(methods) - 1) / 2)
    ax.set_xticklabels(names)
    ax.set_ylim(0, 1)
    ax.set_ylabel("Dice")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_dir / "comparison_dice.png", dpi=110)
    plt.close(fig)
