"""Spatial normalization applied identically before translation and
segmentation: resample to a common in-plane spacing, locate the heart with
a small instance-norm U-net, crop a fixed window around it and z-score the
intensities.

The localizer is trained on labelled source volumes only; instance
normalization makes its activations insensitive to global intensity style,
which is what lets it localize target-modality hearts too. Cropping uses
the center of mass of the per-volume sum of predicted foreground masks and
falls back to the image center when that aggregate is empty.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import zoom

from .config import LocalizerConfig
from .datamodel import (
    BG, DatasetManifest, LabelMap, ManifestRecord, Modality, ProbMap, Volume,
    save_labelmap, save_manifest, save_volume,
)
from .nets import UNet, load_checkpoint, save_checkpoint
from .seeds import child_seed

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class CropWindow:
    center: tuple[int, int]  # (row, col) in resampled coordinates
    size: int


def resample_volume(volume: Volume, target_spacing: float) -> Volume:
    """Bilinear in-plane resample to `target_spacing`; slice axis untouched."""
    if target_spacing <= 0:
        raise ValueError("target spacing must be > 0")
    factors = (volume.spacing[0] / target_spacing, volume.spacing[1] / target_spacing)
    if factors == (1.0, 1.0):
        return volume
    out = zoom(volume.voxels, (1.0, factors[0], factors[1]), order=1,
               mode="nearest", grid_mode=True)
    return Volume(out, (target_spacing, target_spacing, volume.spacing[2]), volume.modality)


def resample_labelmap(labelmap: LabelMap, spacing, target_spacing: float) -> LabelMap:
    if target_spacing <= 0:
        raise ValueError("target spacing must be > 0")
    factors = (spacing[0] / target_spacing, spacing[1] / target_spacing)
    if factors == (1.0, 1.0):
        return labelmap
    out = zoom(labelmap.labels, (1.0, factors[0], factors[1]), order=0,
               mode="nearest", grid_mode=True)
    return LabelMap(out)


def _crop_slice(arr2d: np.ndarray, window: CropWindow, fill=0.0) -> np.ndarray:
    size = window.size
    out = np.full((size, size), fill, dtype=arr2d.dtype)
    r0 = window.center[0] - size // 2
    c0 = window.center[1] - size // 2
    rs, re = max(r0, 0), min(r0 + size, arr2d.shape[0])
    cs, ce = max(c0, 0), min(c0 + size, arr2d.shape[1])
    if rs < re and cs < ce:
        out[rs - r0:re - r0, cs - c0:ce - c0] = arr2d[rs:re, cs:ce]
    return out


def crop_volume(volume: Volume, window: CropWindow) -> Volume:
    out = np.stack([_crop_slice(s, window) for s in volume.voxels])
    return Volume(out, volume.spacing, volume.modality)


def crop_labelmap(labelmap: LabelMap, window: CropWindow) -> LabelMap:
    out = np.stack([_crop_slice(s, window, fill=BG) for s in labelmap.labels])
    return LabelMap(out)


def normalize_volume(volume: Volume) -> Volume:
    """Per-volume z-score with a std floor for constant inputs."""
    v = volume.voxels
    out = (v - v.mean()) / max(float(v.std()), STD_FLOOR)
    return Volume(out, volume.spacing, volume.modality)


def crop_and_normalize(volume: Volume, window: CropWindow) -> Volume:
    return normalize_volume(crop_volume(volume, window))


# ---------------------------------------------------------------------------
# Heart localizer
# ---------------------------------------------------------------------------


def build_localizer(cfg: LocalizerConfig) -> UNet:
    return UNet(in_channels=1, n_classes=4, base_width=cfg.base_width,
                depth=cfg.depth, dropout=0.0, norm="instance")


def localizer_probmap(model: UNet, volume: Volume) -> ProbMap:
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(volume.voxels[:, None].astype(np.float32))
        probs = model(x).numpy()  # (S, 4, H, W)
    return ProbMap(np.transpose(probs, (1, 0, 2, 3)))


def train_localizer(manifest: DatasetManifest, cfg: LocalizerConfig, seed: int,
                    log=None) -> UNet:
    """Train the localizer on all labelled source volumes (plain CE)."""
    records = manifest.select(modality=Modality.SOURCE, labelled=True)
    records = [r for r in records if r.split == "train"]
    if not records:
        raise ValueError("no labelled source training volumes for the localizer")
    images, labels = [], []
    for rec in records:
        vol = normalize_volume(manifest.load_image(rec))
        images.append(vol.voxels)
        labels.append(manifest.load_label(rec).labels)
    x = torch.from_numpy(np.concatenate(images)[:, None].astype(np.float32))
    y = torch.from_numpy(np.concatenate(labels).astype(np.int64))

    torch.manual_seed(child_seed(seed, "localizer-init"))
    model = build_localizer(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(child_seed(seed, "localizer-batches"))
    model.train()
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            probs = model(x[idx])
            loss = torch.nn.functional.nll_loss(torch.log(probs.clamp_min(1e-8)), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss)
        if log:
            log(f"localizer epoch {epoch + 1}/{cfg.epochs} loss {total / max(1, n // cfg.batch_size):.4f}")
    model.eval()
    return model


def locate_crop(volume: Volume, model: UNet, size: int) -> CropWindow:
    """Center the window on the aggregated predicted-foreground mass.

    Per-slice argmax foreground masks are summed over slices; the window
    centers on the aggregate's center of mass, or the image center if the
    aggregate is empty.
    """
    probs = localizer_probmap(model, volume)
    fg = (np.argmax(probs.probs, axis=0) != BG).astype(np.float64)
    aggregate = fg.sum(axis=0)
    return window_from_aggregate(aggregate, volume.shape[1:], size)


def window_from_aggregate(aggregate: np.ndarray, image_shape, size: int) -> CropWindow:
    total = aggregate.sum()
    if total == 0:
        center = (image_shape[0] // 2, image_shape[1] // 2)
    else:
        rows = np.arange(aggregate.shape[0], dtype=np.float64)
        cols = np.arange(aggregate.shape[1], dtype=np.float64)
        r = (aggregate.sum(axis=1) * rows).sum() / total
        c = (aggregate.sum(axis=0) * cols).sum() / total
        center = (int(round(r)), int(round(c)))
    return CropWindow(center=center, size=size)


def save_localizer(model: UNet, path) -> None:
    save_checkpoint(path, "localizer", model.arch, model.state_dict())


def load_localizer(path) -> UNet:
    payload = load_checkpoint(path, "localizer")
    model = UNet(**payload["config"])
    model.load_state_dict(payload["state"])
    model.eval()
    return model


# ---------------------------------------------------------------------------
# Manifest-level preprocessing
# ---------------------------------------------------------------------------


def preprocess_case(volume: Volume, labelmap: LabelMap | None, model: UNet,
                    target_spacing: float, crop_size: int):
    res = resample_volume(volume, target_spacing)
    window = locate_crop(res, model, crop_size)
    out_vol = crop_and_normalize(res, window)
    out_lab = None
    if labelmap is not None:
        res_lab = resample_labelmap(labelmap, volume.spacing, target_spacing)
        out_lab = crop_labelmap(res_lab, window)
    return out_vol, out_lab, window


def preprocess_manifest(manifest: DatasetManifest, model: UNet, target_spacing: float,
                        crop_size: int, out_dir, log=None) -> DatasetManifest:
    """Preprocess every record; writes a new corpus + manifest to `out_dir`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for rec in manifest.records:
        vol = manifest.load_image(rec)
        lab = manifest.load_label(rec) if rec.labelled else None
        out_vol, out_lab, _ = preprocess_case(vol, lab, model, target_spacing, crop_size)
        image_path = f"volumes/{rec.case_id}.img"
        save_volume(out_vol, out_dir / image_path)
        label_path = None
        if out_lab is not None:
            label_path = f"volumes/{rec.case_id}.lab"
            save_labelmap(out_lab, out_dir / label_path)
        records.append(ManifestRecord(
            case_id=rec.case_id, image_path=image_path, label_path=label_path,
            modality=rec.modality, split=rec.split,
        ))
        if log:
            log(f"preprocessed {rec.case_id}")
    out = DatasetManifest(records=records, root=out_dir)
    save_manifest(out, out_dir / "manifest.json")
    return out
