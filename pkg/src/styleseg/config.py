"""Structured run configuration.

Every hyperparameter lives here with its published default; a config file
only overrides what it names. Unknown keys are rejected (typo guard) and
invalid values raise errors naming the offending key. The full effective
config is echoed into each run's artifact directory and re-loads to an
identical object.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(Exception):
    pass


@dataclass
class PhantomCounts:
    source_train: int = 40          # translator pool; first `source_labelled` carry labels
    source_labelled: int = 30       # segmenter training subset of source_train
    source_val: int = 5
    target_train: int = 40
    target_val: int = 5
    target_test: int = 10

    def validate(self, prefix):
        for name in ("source_train", "source_val", "target_train", "target_val", "target_test"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{prefix}.{name} must be >= 0")
        if not 0 <= self.source_labelled <= self.source_train:
            raise ConfigError(f"{prefix}.source_labelled must lie in 0..{prefix}.source_train")


@dataclass
class PhantomGeometry:
    # Fractions of the image half-extent; the myocardial ring strictly
    # encloses the cavity by construction (cavity + thickness).
    lv_radius: tuple[float, float] = (0.16, 0.24)
    myo_thickness: tuple[float, float] = (0.10, 0.16)
    rv_radius: tuple[float, float] = (0.18, 0.26)
    center_jitter: float = 0.10
    apical_taper: float = 0.45      # radius shrink factor at the stack ends
    eccentricity: tuple[float, float] = (0.85, 1.0)

    def validate(self, prefix):
        for name in ("lv_radius", "myo_thickness", "rv_radius", "eccentricity"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ConfigError(f"{prefix}.{name} must be an increasing positive range")
        if not 0 <= self.center_jitter < 0.5:
            raise ConfigError(f"{prefix}.center_jitter must lie in [0, 0.5)")
        if not 0 < self.apical_taper <= 1:
            raise ConfigError(f"{prefix}.apical_taper must lie in (0, 1]")


@dataclass
class PhantomStyle:
    # Mean intensity per tissue, all in [0, 1].
    background: float = 0.05
    body: float = 0.30
    blood: float = 0.85
    myo: float = 0.45
    noise_sigma: float = 0.025
    bias_amplitude: float = 0.15
    scar_probability: float = 0.0
    scar_intensity: float = 0.80

    def validate(self, prefix):
        for name in ("background", "body", "blood", "myo", "scar_intensity"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{prefix}.{name} must lie in [0, 1]")
        if not 0 <= self.scar_probability <= 1:
            raise ConfigError(f"{prefix}.scar_probability must lie in [0, 1]")
        if self.noise_sigma < 0 or self.bias_amplitude < 0:
            raise ConfigError(f"{prefix}.noise_sigma and bias_amplitude must be >= 0")


def _default_source_style() -> PhantomStyle:
    # bSSFP-like: bright blood pool, mid-grey myocardium, no enhancement.
    return PhantomStyle()


def _default_target_style() -> PhantomStyle:
    # LGE-like: shifted contrast, dark myocardium with bright scar patches
    # that blur the border toward the blood pool.
    return PhantomStyle(
        background=0.10,
        body=0.22,
        blood=0.72,
        myo=0.22,
        noise_sigma=0.035,
        bias_amplitude=0.20,
        scar_probability=0.7,
        scar_intensity=0.78,
    )


@dataclass
class PhantomConfig:
    size: int = 64                  # 192 supported for fidelity runs
    slices: int = 6
    spacing: tuple[float, float, float] = (1.25, 1.25, 10.0)
    counts: PhantomCounts = field(default_factory=PhantomCounts)
    geometry: PhantomGeometry = field(default_factory=PhantomGeometry)
    source_style: PhantomStyle = field(default_factory=_default_source_style)
    target_style: PhantomStyle = field(default_factory=_default_target_style)

    def validate(self, prefix="phantom"):
        if self.size < 16:
            raise ConfigError(f"{prefix}.size must be >= 16")
        if self.slices < 1:
            raise ConfigError(f"{prefix}.slices must be >= 1")
        if any(s <= 0 for s in self.spacing):
            raise ConfigError(f"{prefix}.spacing components must be > 0")
        self.counts.validate(f"{prefix}.counts")
        self.geometry.validate(f"{prefix}.geometry")
        self.source_style.validate(f"{prefix}.source_style")
        self.target_style.validate(f"{prefix}.target_style")


@dataclass
class TranslatorConfig:
    style_dim: int = 8
    base_dim: int = 64              # feature width; scaled down in desk configs
    n_downsample: int = 2
    n_res: int = 4
    mlp_dim: int = 256
    iterations: int = 20000
    batch_size: int = 1
    lr: float = 1e-4
    weight_gan: float = 1.0
    weight_image_recon: float = 10.0
    weight_content_recon: float = 1.0
    weight_style_recon: float = 1.0
    weight_style_kl: float = 0.01   # KL of encoded styles to N(0, I)
    kl_window: int = 64             # trailing style codes pooled for the KL term
    log_every: int = 100

    def validate(self, prefix="translator"):
        if self.style_dim < 1:
            raise ConfigError(f"{prefix}.style_dim must be >= 1")
        if self.iterations < 1:
            raise ConfigError(f"{prefix}.iterations must be >= 1")
        if self.batch_size < 1:
            raise ConfigError(f"{prefix}.batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"{prefix}.lr must be > 0")
        for name in ("weight_gan", "weight_image_recon", "weight_content_recon",
                     "weight_style_recon", "weight_style_kl"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{prefix}.{name} must be >= 0")
        if self.kl_window < 2:
            raise ConfigError(f"{prefix}.kl_window must be >= 2")


@dataclass
class AugmentConfig:
    enabled: bool = True
    probability: float = 0.5        # per-sample chance of each transform family
    rotation_deg: float = 15.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    elastic_alpha: float = 10.0
    elastic_sigma: float = 4.0
    gamma_range: tuple[float, float] = (0.7, 1.5)

    def validate(self, prefix):
        if not 0 <= self.probability <= 1:
            raise ConfigError(f"{prefix}.probability must lie in [0, 1]")
        if self.scale_range[0] <= 0 or self.scale_range[0] > self.scale_range[1]:
            raise ConfigError(f"{prefix}.scale_range must be a positive increasing pair")
        if self.gamma_range[0] <= 0 or self.gamma_range[0] > self.gamma_range[1]:
            raise ConfigError(f"{prefix}.gamma_range must be a positive increasing pair")
        if self.elastic_alpha < 0 or self.elastic_sigma <= 0:
            raise ConfigError(f"{prefix}.elastic_alpha/elastic_sigma out of range")


@dataclass
class SegmenterConfig:
    base_width: int = 32
    depth: int = 4
    dropout: float = 0.1
    batch_size: int = 8
    class_weights: tuple[float, float, float, float] = (0.2, 0.25, 0.3, 0.25)
    edge_weight: float = 0.5        # lambda blending the edge term into the loss
    edge_loss_squared: bool = False
    lr_initial: float = 1e-3
    lr_finetune: float = 1e-5
    pretrain_epochs: int = 500
    finetune_epochs: int = 500
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self, prefix="segmenter"):
        if self.edge_weight < 0:
            raise ConfigError(f"{prefix}.edge_weight must be >= 0")
        if len(self.class_weights) != 4 or any(w <= 0 for w in self.class_weights):
            raise ConfigError(f"{prefix}.class_weights must be 4 positive values")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"{prefix}.dropout must lie in [0, 1)")
        if self.lr_initial <= 0 or self.lr_finetune <= 0:
            raise ConfigError(f"{prefix}.lr_initial and lr_finetune must be > 0")
        if self.pretrain_epochs < 1 or self.finetune_epochs < 1:
            raise ConfigError(f"{prefix}.pretrain_epochs/finetune_epochs must be >= 1")
        if self.base_width < 2 or self.depth < 1:
            raise ConfigError(f"{prefix}.base_width/depth out of range")
        if self.batch_size < 1:
            raise ConfigError(f"{prefix}.batch_size must be >= 1")
        self.augment.validate(f"{prefix}.augment")


@dataclass
class LocalizerConfig:
    base_width: int = 8
    depth: int = 3
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3

    def validate(self, prefix="localizer"):
        if self.epochs < 1:
            raise ConfigError(f"{prefix}.epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"{prefix}.lr must be > 0")


@dataclass
class CrfConfig:
    iterations: int = 5
    weight_smooth: float = 3.0      # Gaussian (smoothness) kernel weight
    sigma_spatial: float = 3.0      # px
    weight_bilateral: float = 5.0   # appearance kernel weight
    sigma_bilateral_spatial: float = 30.0  # px
    sigma_bilateral_intensity: float = 0.5  # normalized-intensity units
    method: str = "auto"            # auto | exact | fast
    truncate: float = 12.0          # window radius in sigmas for the fast path
    grid_step: float = 0.04         # intensity-node spacing in sigmas (fast path)
    exact_max_pixels: int = 4096    # auto switches to fast above this

    def validate(self, prefix="crf"):
        if self.iterations < 0:
            raise ConfigError(f"{prefix}.iterations must be >= 0")
        for name in ("sigma_spatial", "sigma_bilateral_spatial", "sigma_bilateral_intensity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{prefix}.{name} must be > 0")
        if self.weight_smooth < 0 or self.weight_bilateral < 0:
            raise ConfigError(f"{prefix}.weight_smooth/weight_bilateral must be >= 0")
        if self.method not in ("auto", "exact", "fast"):
            raise ConfigError(f"{prefix}.method must be auto, exact or fast")
        if self.truncate <= 0 or self.grid_step <= 0:
            raise ConfigError(f"{prefix}.truncate/grid_step must be > 0")


@dataclass
class MorphConfig:
    iterations: int = 1
    operation: str = "closing"      # closing (dilate->erode) or opening

    def validate(self, prefix="morph"):
        if self.iterations < 0:
            raise ConfigError(f"{prefix}.iterations must be >= 0")
        if self.operation not in ("closing", "opening"):
            raise ConfigError(f"{prefix}.operation must be closing or opening")


@dataclass
class EvalConfig:
    boundary_mode: str = "2d"       # 2d (per-slice) or 3d boundary adjacency

    def validate(self, prefix="eval"):
        if self.boundary_mode not in ("2d", "3d"):
            raise ConfigError(f"{prefix}.boundary_mode must be 2d or 3d")


BASELINE_NAMES = ("source_only", "unet_ft", "cascade_ft", "cascade_ft_pp")


@dataclass
class ExperimentConfig:
    baselines: tuple[str, ...] = BASELINE_NAMES
    ensemble_size: int = 4
    run_ensemble: bool = True
    single_threaded: bool = True    # required for byte-identical reruns

    def validate(self, prefix="experiment"):
        for b in self.baselines:
            if b not in BASELINE_NAMES:
                raise ConfigError(f"{prefix}.baselines entry {b!r} not one of {BASELINE_NAMES}")
        if self.ensemble_size < 1:
            raise ConfigError(f"{prefix}.ensemble_size must be >= 1")


@dataclass
class RunConfig:
    seed: int = 2024
    target_spacing: float = 1.25    # mm, in-plane
    crop_size: int = 192
    styles_per_image: int = 5
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    translator: TranslatorConfig = field(default_factory=TranslatorConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)
    crf: CrfConfig = field(default_factory=CrfConfig)
    morph: MorphConfig = field(default_factory=MorphConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self):
        if self.target_spacing <= 0:
            raise ConfigError("target_spacing must be > 0")
        if self.crop_size < 2 or self.crop_size % 2:
            raise ConfigError("crop_size must be even and >= 2")
        if self.styles_per_image < 1:
            raise ConfigError("styles_per_image must be >= 1")
        for section in ("phantom", "translator", "segmenter", "localizer",
                        "crf", "morph", "eval", "experiment"):
            getattr(self, section).validate(section)


# ---------------------------------------------------------------------------
# Loading / echoing
# ---------------------------------------------------------------------------


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or cls.__name__}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key {(prefix + '.' if prefix else '') + key!r}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        sub = f"{prefix}.{f.name}" if prefix else f.name
        kwargs[f.name] = _coerce(hints[f.name], value, sub)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{prefix or cls.__name__}: {exc}") from exc


def _coerce(hint, value, key):
    origin = typing.get_origin(hint)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, key)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list")
        args = typing.get_args(hint)
        if args and args[-1] is not Ellipsis and len(args) != len(value):
            raise ConfigError(f"{key}: expected {len(args)} entries, got {len(value)}")
        elem = args[0] if args else float
        return tuple(_coerce(elem, v, key) for v in value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def config_from_dict(data: dict | None) -> RunConfig:
    cfg = _build(RunConfig, data or {}, "")
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    """Load a YAML config; unspecified keys take their defaults."""
    with open(path) as f:
        data = yaml.safe_load(f)
    if data is None:
        data = {}
    return config_from_dict(data)


def config_to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = config_to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def echo_config(cfg: RunConfig, path) -> None:
    """Write the full effective config; re-loading it reproduces `cfg`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=True)


def config_hash(cfg_or_section) -> str:
    """Stable digest of a config (sub)tree, used for stage invalidation."""
    if dataclasses.is_dataclass(cfg_or_section):
        payload = config_to_dict(cfg_or_section)
    else:
        payload = cfg_or_section
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
