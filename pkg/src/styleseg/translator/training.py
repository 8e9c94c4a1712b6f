"""Unpaired translator training.

One iteration samples a random slice per domain and optimizes, jointly
over both domains: within-domain image reconstruction, cross-domain
translation with latent (content and style) reconstruction, least-squares
adversarial terms, and a KL penalty pulling encoded styles toward
N(0, I). Batch size 1 follows the published schedule, so the KL term is
evaluated on a trailing window of encoded style codes (older codes enter
detached); the current code still receives gradient through the window
statistics.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from pathlib import Path

import numpy as np
import torch

from ..config import TranslatorConfig
from ..datamodel import DatasetManifest, Modality
from ..nets import load_checkpoint, save_checkpoint
from ..seeds import child_seed
from .networks import TranslatorNets


class TrainingDiverged(RuntimeError):
    pass


def style_kl_to_standard_normal(styles: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(N(mu, diag sigma^2) || N(0, I)) of the fitted batch
    Gaussian (population statistics); requires at least two samples."""
    if styles.dim() != 2:
        raise ValueError(f"expected a (batch, dim) tensor, got {tuple(styles.shape)}")
    if styles.shape[0] < 2:
        raise ValueError("batch statistics need at least 2 style codes")
    mu = styles.mean(dim=0)
    var = styles.var(dim=0, unbiased=False)
    return 0.5 * (mu.pow(2) + var - 1.0 - torch.log(var.clamp_min(1e-12))).sum()


def build_translator(cfg: TranslatorConfig, img_size: int) -> TranslatorNets:
    return TranslatorNets(cfg.base_dim, cfg.style_dim, cfg.n_downsample,
                          cfg.n_res, cfg.mlp_dim, img_size)


def _load_slices(manifest: DatasetManifest, modality: Modality) -> np.ndarray:
    records = manifest.select(modality=modality, split="train")
    if not records:
        raise ValueError(f"no {modality.value} training volumes for the translator")
    slices = [manifest.load_image(r).voxels for r in records]
    return np.concatenate(slices).astype(np.float32)


def train_translator(manifest: DatasetManifest, cfg: TranslatorConfig, seed: int,
                     out_dir, log=None) -> TranslatorNets:
    """Train on the unpaired train-split pools; checkpoints into `out_dir`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    src = _load_slices(manifest, Modality.SOURCE)
    tgt = _load_slices(manifest, Modality.TARGET)
    if src.shape[-1] != src.shape[-2]:
        raise ValueError("translator expects square slices")
    img_size = src.shape[-1]

    torch.manual_seed(child_seed(seed, "translator-init"))
    model = build_translator(cfg, img_size)
    gen_params = list(model.gen.parameters())
    dis_params = list(model.dis.parameters())
    opt_gen = torch.optim.Adam(gen_params, lr=cfg.lr, betas=(0.5, 0.999))
    opt_dis = torch.optim.Adam(dis_params, lr=cfg.lr, betas=(0.5, 0.999))
    rng = np.random.default_rng(child_seed(seed, "translator-batches"))
    style_gen = torch.Generator().manual_seed(child_seed(seed, "translator-styles"))
    windows = {"source": deque(maxlen=cfg.kl_window), "target": deque(maxlen=cfg.kl_window)}

    def batch(pool):
        idx = rng.integers(0, pool.shape[0], size=cfg.batch_size)
        return torch.from_numpy(pool[idx][:, None])

    def sample_style(n):
        return torch.randn(n, cfg.style_dim, generator=style_gen)

    def kl_term(domain, code):
        window = windows[domain]
        pooled = torch.cat([code] + [c for c in window], dim=0)
        loss = (style_kl_to_standard_normal(pooled)
                if pooled.shape[0] >= 2 else code.new_zeros(()))
        window.append(code.detach())
        return loss

    history = []
    model.train()
    for step in range(1, cfg.iterations + 1):
        x_src, x_tgt = batch(src), batch(tgt)

        # discriminators on last translations (skip before any exist)
        with torch.no_grad():
            s_fake_tgt = sample_style(cfg.batch_size)
            s_fake_src = sample_style(cfg.batch_size)
            fake_tgt = model.translate(x_src, s_fake_tgt, "source", "target")
            fake_src = model.translate(x_tgt, s_fake_src, "target", "source")
        loss_dis = (model.dis["target"].loss_dis(fake_tgt, x_tgt)
                    + model.dis["source"].loss_dis(fake_src, x_src))
        opt_dis.zero_grad()
        loss_dis.backward()
        opt_dis.step()

        # generators
        c_src, s_src = model.encode(x_src, "source")
        c_tgt, s_tgt = model.encode(x_tgt, "target")
        recon_src = model.decode(c_src, s_src, "source")
        recon_tgt = model.decode(c_tgt, s_tgt, "target")
        loss_recon = ((recon_src - x_src).abs().mean()
                      + (recon_tgt - x_tgt).abs().mean())

        s_prior_tgt = sample_style(cfg.batch_size)
        s_prior_src = sample_style(cfg.batch_size)
        x_src2tgt = model.decode(c_src, s_prior_tgt, "target")
        x_tgt2src = model.decode(c_tgt, s_prior_src, "source")
        c_src_re, s_tgt_re = model.encode(x_src2tgt, "target")
        c_tgt_re, s_src_re = model.encode(x_tgt2src, "source")
        loss_content = ((c_src_re - c_src).abs().mean()
                        + (c_tgt_re - c_tgt).abs().mean())
        loss_style = ((s_tgt_re - s_prior_tgt).abs().mean()
                      + (s_src_re - s_prior_src).abs().mean())
        loss_gan = (model.dis["target"].loss_gen(x_src2tgt)
                    + model.dis["source"].loss_gen(x_tgt2src))
        loss_kl = kl_term("source", s_src) + kl_term("target", s_tgt)

        loss_gen = (cfg.weight_image_recon * loss_recon
                    + cfg.weight_content_recon * loss_content
                    + cfg.weight_style_recon * loss_style
                    + cfg.weight_gan * loss_gan
                    + cfg.weight_style_kl * loss_kl)
        opt_gen.zero_grad()
        loss_gen.backward()
        opt_gen.step()

        if not (math.isfinite(float(loss_gen)) and math.isfinite(float(loss_dis))):
            raise TrainingDiverged(
                f"non-finite loss at iteration {step}: gen={float(loss_gen)}, "
                f"dis={float(loss_dis)}"
            )
        if step % cfg.log_every == 0 or step == cfg.iterations:
            row = {
                "iteration": step,
                "loss_gen": float(loss_gen), "loss_dis": float(loss_dis),
                "recon": float(loss_recon), "content": float(loss_content),
                "style": float(loss_style), "gan": float(loss_gan),
                "kl": float(loss_kl),
            }
            history.append(row)
            if log:
                log(f"iter {step}/{cfg.iterations} gen {row['loss_gen']:.3f} "
                    f"dis {row['loss_dis']:.3f} recon {row['recon']:.3f}")

    _write_history(history, out_dir / "translator_losses.csv")
    model.eval()
    save_translator(model, out_dir / "translator.pt")
    return model


def _write_history(history, path):
    if not history:
        return
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(history[0]))
        writer.writeheader()
        writer.writerows(history)


def save_translator(model: TranslatorNets, path) -> None:
    save_checkpoint(path, "translator", model.arch, model.state_dict())


def load_translator(path) -> TranslatorNets:
    payload = load_checkpoint(path, "translator")
    model = TranslatorNets(**payload["config"])
    model.load_state_dict(payload["state"])
    model.eval()
    return model


def reconstruction_l1(model: TranslatorNets, manifest: DatasetManifest,
                      modality: Modality, max_slices: int = 32) -> float:
    """Mean within-domain reconstruction error over train-split slices."""
    domain = "source" if Modality(modality) == Modality.SOURCE else "target"
    pool = _load_slices(manifest, Modality(modality))[:max_slices]
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(pool[:, None])
        errs = []
        for i in range(x.shape[0]):
            xi = x[i:i + 1]
            c, s = model.encode(xi, domain)
            errs.append(float((model.decode(c, s, domain) - xi).abs().mean()))
    return float(np.mean(errs))
