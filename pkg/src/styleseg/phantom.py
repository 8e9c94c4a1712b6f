"""Procedural two-modality cardiac phantom.

Anatomy is a 2.5D stack of per-slice ellipses (cavity, enclosing
myocardial ring, crescent-shaped right ventricle) whose radii taper toward
the stack ends. The same geometry renders under either modality style:
the source style shows bright blood and mid-grey myocardium, the target
style shifts contrast and plants bright heterogeneous patches inside the
myocardium so its border toward the blood pool becomes ambiguous.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import PhantomConfig, PhantomStyle
from .datamodel import (
    BG, LV, MYO, RV,
    DatasetManifest, LabelMap, ManifestRecord, Modality, Volume,
    save_labelmap, save_manifest, save_volume,
)
from .seeds import child_seed

LABEL_SMOOTH_SIGMA = 0.7  # px, applied to the mean-intensity image only


class PhantomGeometryError(Exception):
    """Requested geometry cannot fit inside the image."""


def _sample_geometry(cfg: PhantomConfig, rng: np.random.Generator) -> dict:
    g = cfg.geometry
    half = cfg.size / 2.0
    lv_r = rng.uniform(*g.lv_radius) * half
    myo_t = rng.uniform(*g.myo_thickness) * half
    rv_r = rng.uniform(*g.rv_radius) * half
    ecc = rng.uniform(*g.eccentricity)
    jitter = g.center_jitter * half
    center = np.array([half, half]) + rng.uniform(-jitter, jitter, size=2)
    rv_angle = rng.uniform(np.pi * 0.75, np.pi * 1.25)  # RV sits on the left side
    myo_r = lv_r + myo_t
    rv_offset = myo_r + 0.55 * rv_r
    reach = max(myo_r, rv_offset + rv_r)
    if (center - reach < 1).any() or (center + reach > cfg.size - 2).any():
        raise PhantomGeometryError(
            f"structures of reach {reach:.1f}px around {center} exceed a "
            f"{cfg.size}x{cfg.size} image"
        )
    return {
        "center": center, "lv_r": lv_r, "myo_r": myo_r, "rv_r": rv_r,
        "ecc": ecc, "rv_angle": rv_angle, "rv_offset": rv_offset,
        "body_r": min(half - 1.0, reach * 1.6),
    }


def _slice_taper(cfg: PhantomConfig, s: int) -> float:
    if cfg.slices == 1:
        return 1.0
    z = 2.0 * s / (cfg.slices - 1) - 1.0  # -1 at apex, +1 at base
    return 1.0 - (1.0 - cfg.geometry.apical_taper) * z * z


def _ellipse(size, center, r_row, r_col):
    rows = np.arange(size)[:, None] - center[0]
    cols = np.arange(size)[None, :] - center[1]
    return (rows / r_row) ** 2 + (cols / r_col) ** 2 <= 1.0


def _render_labels(cfg: PhantomConfig, geo: dict) -> np.ndarray:
    labels = np.zeros((cfg.slices, cfg.size, cfg.size), dtype=np.uint8)
    for s in range(cfg.slices):
        f = _slice_taper(cfg, s)
        c = geo["center"]
        lv = _ellipse(cfg.size, c, geo["lv_r"] * f * geo["ecc"], geo["lv_r"] * f)
        myo = _ellipse(cfg.size, c, geo["myo_r"] * f * geo["ecc"], geo["myo_r"] * f)
        rv_c = c + geo["rv_offset"] * f * np.array(
            [np.sin(geo["rv_angle"]), np.cos(geo["rv_angle"])]
        )
        rv = _ellipse(cfg.size, rv_c, geo["rv_r"] * f, geo["rv_r"] * f * 1.2)
        sl = labels[s]
        sl[rv & ~myo] = RV
        sl[myo] = MYO
        sl[lv] = LV
    return labels


def _scar_mask(cfg: PhantomConfig, labels: np.ndarray, geo: dict,
               rng: np.random.Generator, probability: float) -> np.ndarray:
    """Angular-sector patches inside the myocardial ring, coherent across slices."""
    mask = np.zeros(labels.shape, dtype=bool)
    if probability <= 0:
        return mask
    n_patches = rng.integers(1, 4)
    arcs = [(rng.uniform(0, 2 * np.pi), rng.uniform(0.5, 1.4)) for _ in range(n_patches)]
    hit = rng.random(labels.shape[0]) < probability
    rows = np.arange(cfg.size)[:, None] - geo["center"][0]
    cols = np.arange(cfg.size)[None, :] - geo["center"][1]
    theta = np.arctan2(rows, cols) % (2 * np.pi)
    for s in range(labels.shape[0]):
        if not hit[s]:
            continue
        ring = labels[s] == MYO
        for theta0, width in arcs:
            in_arc = ((theta - theta0) % (2 * np.pi)) < width
            mask[s] |= ring & in_arc
    return mask


def _bias_field(size: int, slices: int, amplitude: float,
                rng: np.random.Generator) -> np.ndarray:
    """Smooth multiplicative field in [1 - amplitude, 1 + amplitude]."""
    if amplitude <= 0:
        return np.ones((slices, size, size), dtype=np.float32)
    u = np.linspace(-1, 1, size)[:, None] * np.ones(size)[None, :]
    v = np.linspace(-1, 1, size)[None, :] * np.ones(size)[:, None]
    coef = rng.uniform(-1, 1, size=5)
    poly = coef[0] * u + coef[1] * v + coef[2] * u * v + coef[3] * u * u + coef[4] * v * v
    span = np.abs(poly).max()
    if span > 0:
        poly = poly / span
    return (1.0 + amplitude * poly)[None].repeat(slices, axis=0).astype(np.float32)


def _render_intensities(cfg: PhantomConfig, style: PhantomStyle, labels: np.ndarray,
                        geo: dict, rng: np.random.Generator) -> np.ndarray:
    means = np.full(labels.shape, style.background, dtype=np.float32)
    for s in range(labels.shape[0]):
        body = _ellipse(cfg.size, geo["center"], geo["body_r"], geo["body_r"] * 1.15)
        means[s][body] = style.body
    means[labels == LV] = style.blood
    means[labels == RV] = style.blood
    means[labels == MYO] = style.myo
    scar = _scar_mask(cfg, labels, geo, rng, style.scar_probability)
    means[scar] = style.scar_intensity
    for s in range(means.shape[0]):
        means[s] = gaussian_filter(means[s], LABEL_SMOOTH_SIGMA)
    bias = _bias_field(cfg.size, labels.shape[0], style.bias_amplitude, rng)
    noise = rng.normal(0.0, style.noise_sigma, size=means.shape).astype(np.float32)
    return means * bias + noise


def generate_phantom_case(cfg: PhantomConfig, case_seed: int,
                          modality: Modality) -> tuple[Volume, LabelMap]:
    """Deterministically render one case.

    Geometry depends only on (cfg, case_seed); the modality selects the
    style, so both modalities of the same case share one label map.
    """
    modality = Modality(modality)
    geo_rng = np.random.default_rng(child_seed(case_seed, "geometry"))
    geo = _sample_geometry(cfg, geo_rng)
    labels = _render_labels(cfg, geo)
    style = cfg.source_style if modality == Modality.SOURCE else cfg.target_style
    render_rng = np.random.default_rng(child_seed(case_seed, "render", modality.value))
    voxels = _render_intensities(cfg, style, labels, geo, render_rng)
    return Volume(voxels, cfg.spacing, modality), LabelMap(labels)


def generate_corpus(cfg: PhantomConfig, seed: int, out_dir) -> DatasetManifest:
    """Write a full two-modality corpus and its manifest to `out_dir`.

    Split roles: source train images feed the translator (all of them) and
    the segmenter (the labelled subset); target train images are written
    without labels, mirroring the unlabelled target pool. Target val/test
    labels exist for evaluation only.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[ManifestRecord] = []

    groups = [
        ("src_train", Modality.SOURCE, "train", cfg.counts.source_train,
         lambda i: i < cfg.counts.source_labelled),
        ("src_val", Modality.SOURCE, "val", cfg.counts.source_val, lambda i: True),
        ("tgt_train", Modality.TARGET, "train", cfg.counts.target_train, lambda i: False),
        ("tgt_val", Modality.TARGET, "val", cfg.counts.target_val, lambda i: True),
        ("tgt_test", Modality.TARGET, "test", cfg.counts.target_test, lambda i: True),
    ]
    for name, modality, split, count, has_label in groups:
        for i in range(count):
            case_id = f"{name}_{i:03d}"
            case_seed = child_seed(seed, "case", name, i)
            volume, labelmap = generate_phantom_case(cfg, case_seed, modality)
            image_path = f"volumes/{case_id}.img"
            save_volume(volume, out_dir / image_path)
            label_path = None
            if has_label(i):
                label_path = f"volumes/{case_id}.lab"
                save_labelmap(labelmap, out_dir / label_path)
            records.append(ManifestRecord(
                case_id=case_id, image_path=image_path, label_path=label_path,
                modality=modality, split=split,
            ))

    manifest = DatasetManifest(records=records, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
