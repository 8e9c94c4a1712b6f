"""Core data types and their bit-exact on-disk formats.

Volumes are raw little-endian float32 payloads, label maps raw uint8, both
with a JSON sidecar at ``<path>.json`` describing dims/spacing/modality.
The format is deliberately container-free so round trips are exact and the
files are inspectable with nothing but a hex editor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

# Fixed class ordering used everywhere (matches the loss-weight tuple order).
BG, LV, MYO, RV = 0, 1, 2, 3
CLASS_NAMES = ("BG", "LV", "MYO", "RV")
NUM_CLASSES = 4
FOREGROUND_CLASSES = (LV, MYO, RV)

SPLITS = ("train", "val", "test")

PROB_SUM_TOL = 1e-5


class Modality(str, Enum):
    SOURCE = "source"
    TARGET = "target"
    SYNTH_TARGET = "synth_target"


class FormatError(Exception):
    """On-disk payload/sidecar inconsistency."""


class ValidationError(Exception):
    """In-memory object violates a datamodel invariant."""


@dataclass(frozen=True)
class Volume:
    """Scalar image stack: voxels (slices, height, width) + physical spacing.

    spacing = (row mm, col mm, slice thickness mm).
    """

    voxels: np.ndarray
    spacing: tuple[float, float, float]
    modality: Modality

    def __post_init__(self):
        vox = np.ascontiguousarray(np.asarray(self.voxels, dtype=np.float32))
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "modality", Modality(self.modality))
        if vox.ndim != 3 or min(vox.shape) < 1:
            raise ValidationError(f"volume must be 3D with all dims >= 1, got {vox.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValidationError(f"spacing components must be > 0, got {self.spacing}")
        if not np.isfinite(vox).all():
            raise ValidationError("volume contains non-finite voxels")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def with_voxels(self, voxels, spacing=None, modality=None) -> "Volume":
        return Volume(voxels, spacing or self.spacing, modality or self.modality)


@dataclass(frozen=True)
class LabelMap:
    """4-class integer mask, shape-paired with its Volume."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 3 or min(lab.shape) < 1:
            raise ValidationError(f"label map must be 3D with all dims >= 1, got {lab.shape}")
        if lab.size and (lab.min() < 0 or lab.max() >= NUM_CLASSES):
            raise ValidationError(
                f"labels must lie in 0..{NUM_CLASSES - 1}, got range "
                f"[{lab.min()}, {lab.max()}]"
            )
        object.__setattr__(self, "labels", np.ascontiguousarray(lab.astype(np.uint8)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class ProbMap:
    """Per-class probability field, shape (4, slices, height, width)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.probs, dtype=np.float32))
        object.__setattr__(self, "probs", p)
        if p.ndim != 4 or p.shape[0] != NUM_CLASSES:
            raise ValidationError(f"prob map must be ({NUM_CLASSES}, S, H, W), got {p.shape}")
        if p.min() < -PROB_SUM_TOL or p.max() > 1 + PROB_SUM_TOL:
            raise ValidationError("probabilities must lie in [0, 1]")
        sums = p.sum(axis=0)
        if np.abs(sums - 1.0).max() > PROB_SUM_TOL:
            raise ValidationError(
                f"per-pixel class sums deviate from 1 by {np.abs(sums - 1.0).max():.2e}"
            )

    def argmax_labels(self) -> LabelMap:
        return LabelMap(np.argmax(self.probs, axis=0).astype(np.uint8))


# ---------------------------------------------------------------------------
# Volume / LabelMap / ProbMap I/O
# ---------------------------------------------------------------------------


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def _write_payload(path: Path, array: np.ndarray, sidecar: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(array.tobytes())
    with open(_sidecar_path(path), "w") as f:
        json.dump(sidecar, f, indent=1, sort_keys=True)
        f.write("\n")


def _read_payload(path, dtype: str, expected_kind: str) -> tuple[np.ndarray, dict]:
    path = Path(path)
    side = _sidecar_path(path)
    if not path.exists() or not side.exists():
        raise FormatError(f"missing payload or sidecar for {path}")
    with open(side) as f:
        meta = json.load(f)
    if meta.get("kind") != expected_kind:
        raise FormatError(f"{side}: expected kind={expected_kind!r}, got {meta.get('kind')!r}")
    if meta.get("dtype") != dtype:
        raise FormatError(f"{side}: expected dtype={dtype!r}, got {meta.get('dtype')!r}")
    dims = meta.get("dims")
    raw = path.read_bytes()
    n = int(np.prod(dims))
    item = np.dtype(dtype).itemsize
    if len(raw) != n * item:
        raise FormatError(
            f"{path}: payload is {len(raw)} bytes, sidecar dims {dims} imply {n * item}"
        )
    arr = np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<")).reshape(dims)
    return arr.astype(dtype), meta


def save_volume(volume: Volume, path) -> None:
    sidecar = {
        "kind": "volume",
        "dims": list(volume.shape),
        "spacing": list(volume.spacing),
        "modality": volume.modality.value,
        "dtype": "float32",
    }
    _write_payload(Path(path), volume.voxels.astype("<f4"), sidecar)


def load_volume(path) -> Volume:
    arr, meta = _read_payload(path, "float32", "volume")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{path}: non-finite voxels on load")
    return Volume(arr, tuple(meta["spacing"]), Modality(meta["modality"]))


def save_labelmap(labelmap: LabelMap, path) -> None:
    sidecar = {"kind": "labels", "dims": list(labelmap.shape), "dtype": "uint8"}
    _write_payload(Path(path), labelmap.labels, sidecar)


def load_labelmap(path) -> LabelMap:
    arr, _ = _read_payload(path, "uint8", "labels")
    if arr.size and arr.max() >= NUM_CLASSES:
        raise ValidationError(f"{path}: label value {arr.max()} out of range 0..{NUM_CLASSES - 1}")
    return LabelMap(arr)


def save_probmap(probmap: ProbMap, path) -> None:
    sidecar = {"kind": "probs", "dims": list(probmap.probs.shape), "dtype": "float32"}
    _write_payload(Path(path), probmap.probs.astype("<f4"), sidecar)


def load_probmap(path) -> ProbMap:
    arr, _ = _read_payload(path, "float32", "probs")
    return ProbMap(arr)


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    case_id: str
    image_path: str
    modality: Modality
    split: str
    label_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")

    @property
    def labelled(self) -> bool:
        return self.label_path is not None


@dataclass
class DatasetManifest:
    """Declarative list of (image, optional label, modality, split) records.

    Paths are stored relative to the manifest file's directory.
    """

    records: list[ManifestRecord] = field(default_factory=list)
    root: Path = field(default_factory=Path)

    def select(self, modality=None, split=None, labelled=None) -> list[ManifestRecord]:
        out = []
        for r in self.records:
            if modality is not None and r.modality != Modality(modality):
                continue
            if split is not None and r.split != split:
                continue
            if labelled is not None and r.labelled != labelled:
                continue
            out.append(r)
        return out

    def image_file(self, record: ManifestRecord) -> Path:
        return self.root / record.image_path

    def label_file(self, record: ManifestRecord) -> Path:
        if record.label_path is None:
            raise ValidationError(f"record {record.case_id} has no label")
        return self.root / record.label_path

    def load_image(self, record: ManifestRecord) -> Volume:
        return load_volume(self.image_file(record))

    def load_label(self, record: ManifestRecord) -> LabelMap:
        return load_labelmap(self.label_file(record))


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "records": [
            {
                "case_id": r.case_id,
                "image": r.image_path,
                "label": r.label_path,
                "modality": r.modality.value,
                "split": r.split,
            }
            for r in manifest.records
        ]
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as f:
        payload = json.load(f)
    records = [
        ManifestRecord(
            case_id=r["case_id"],
            image_path=r["image"],
            label_path=r.get("label"),
            modality=Modality(r["modality"]),
            split=r["split"],
        )
        for r in payload["records"]
    ]
    manifest = DatasetManifest(records=records, root=path.parent)
    validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: DatasetManifest) -> None:
    """Check that every path resolves and labelled records have matching dims.

    Reads sidecars only, so validation stays cheap for large corpora.
    """
    for r in manifest.records:
        img = manifest.image_file(r)
        if not img.exists() or not _sidecar_path(img).exists():
            raise ValidationError(f"record {r.case_id}: image {img} does not resolve")
        if r.labelled:
            lab = manifest.label_file(r)
            if not lab.exists() or not _sidecar_path(lab).exists():
                raise ValidationError(f"record {r.case_id}: label {lab} does not resolve")
            with open(_sidecar_path(img)) as f:
                img_dims = json.load(f)["dims"]
            with open(_sidecar_path(lab)) as f:
                lab_dims = json.load(f)["dims"]
            if img_dims != lab_dims:
                raise ValidationError(
                    f"record {r.case_id}: image dims {img_dims} != label dims {lab_dims}"
                )


def one_hot(labels: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Expand an integer label array to a leading one-hot class axis."""
    out = np.zeros((num_classes,) + labels.shape, dtype=np.float32)
    for c in range(num_classes):
        out[c] = labels == c
    return out
