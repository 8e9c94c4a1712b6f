"""Multi-modal translation networks: content/style encoders, an AdaIN
decoder conditioned on the style code, and per-domain patch discriminators.

Per-domain generators disentangle an image into a spatial content code and
a flat style vector; decoding any content code with a style code from the
other domain performs the translation. Style conditioning enters the
decoder through adaptive instance normalization whose scale/shift are
produced from the style code by a small MLP.

The decoder head is linear (no tanh): inputs are z-scored volumes whose
range is unbounded, so a squashing head could not reconstruct them.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class AdaptiveInstanceNorm2d(nn.Module):
    """Instance norm whose affine parameters are assigned per forward."""

    def __init__(self, num_features, eps=1e-5):
        super().__init__()
        self.num_features = num_features
        self.eps = eps
        self.weight = None
        self.bias = None

    def forward(self, x):
        assert self.weight is not None and self.bias is not None, \
            "AdaIN parameters must be assigned before the forward pass"
        b, c = x.shape[0], x.shape[1]
        flat = x.contiguous().view(1, b * c, *x.shape[2:])
        out = F.instance_norm(flat, weight=self.weight.repeat(b) + 1.0,
                              bias=self.bias.repeat(b), eps=self.eps)
        return out.view_as(x)


class LayerNorm2d(nn.Module):
    """Per-sample normalization over (C, H, W) with per-channel affine."""

    def __init__(self, num_features, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(num_features))
        self.beta = nn.Parameter(torch.zeros(num_features))

    def forward(self, x):
        mean = x.view(x.shape[0], -1).mean(1).view(-1, 1, 1, 1)
        std = x.view(x.shape[0], -1).std(1).view(-1, 1, 1, 1)
        x = (x - mean) / (std + self.eps)
        return x * self.gamma.view(1, -1, 1, 1) + self.beta.view(1, -1, 1, 1)


class ConvBlock(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, stride, padding,
                 norm="none", activation="relu"):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride, padding)
        if norm == "in":
            self.norm = nn.InstanceNorm2d(out_ch)
        elif norm == "adain":
            self.norm = AdaptiveInstanceNorm2d(out_ch)
        elif norm == "ln":
            self.norm = LayerNorm2d(out_ch)
        elif norm == "none":
            self.norm = None
        else:
            raise ValueError(f"unsupported norm {norm!r}")
        if activation == "relu":
            self.activation = nn.ReLU(inplace=True)
        elif activation == "lrelu":
            self.activation = nn.LeakyReLU(0.2, inplace=True)
        elif activation == "none":
            self.activation = None
        else:
            raise ValueError(f"unsupported activation {activation!r}")

    def forward(self, x):
        x = self.conv(x)
        if self.norm is not None:
            x = self.norm(x)
        if self.activation is not None:
            x = self.activation(x)
        return x


class ResBlock(nn.Module):
    def __init__(self, dim, norm):
        super().__init__()
        self.block = nn.Sequential(
            ConvBlock(dim, dim, 3, 1, 1, norm=norm, activation="relu"),
            ConvBlock(dim, dim, 3, 1, 1, norm=norm, activation="none"),
        )

    def forward(self, x):
        return x + self.block(x)


class ContentEncoder(nn.Module):
    def __init__(self, in_ch, base_dim, n_downsample, n_res):
        super().__init__()
        layers = [ConvBlock(in_ch, base_dim, 7, 1, 3, norm="in")]
        dim = base_dim
        for _ in range(n_downsample):
            layers.append(ConvBlock(dim, 2 * dim, 4, 2, 1, norm="in"))
            dim *= 2
        layers.extend(ResBlock(dim, "in") for _ in range(n_res))
        self.model = nn.Sequential(*layers)
        self.output_dim = dim

    def forward(self, x):
        return self.model(x)


class StyleEncoder(nn.Module):
    def __init__(self, in_ch, base_dim, style_dim):
        super().__init__()
        layers = [ConvBlock(in_ch, base_dim, 7, 1, 3)]
        dim = base_dim
        for _ in range(2):
            layers.append(ConvBlock(dim, 2 * dim, 4, 2, 1))
            dim *= 2
        layers += [nn.AdaptiveAvgPool2d(1), nn.Conv2d(dim, style_dim, 1)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x).view(x.shape[0], -1)


class Decoder(nn.Module):
    def __init__(self, content_dim, out_ch, n_upsample, n_res):
        super().__init__()
        layers = [ResBlock(content_dim, "adain") for _ in range(n_res)]
        dim = content_dim
        for _ in range(n_upsample):
            layers += [nn.Upsample(scale_factor=2, mode="nearest"),
                       ConvBlock(dim, dim // 2, 5, 1, 2, norm="ln")]
            dim //= 2
        layers.append(ConvBlock(dim, out_ch, 7, 1, 3, activation="none"))
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class MLP(nn.Module):
    def __init__(self, in_dim, out_dim, hidden_dim, n_blocks=3):
        super().__init__()
        layers = [nn.Linear(in_dim, hidden_dim), nn.ReLU(inplace=True)]
        for _ in range(n_blocks - 2):
            layers += [nn.Linear(hidden_dim, hidden_dim), nn.ReLU(inplace=True)]
        layers.append(nn.Linear(hidden_dim, out_dim))
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class DomainGenerator(nn.Module):
    """Encoder-decoder pair for one domain."""

    def __init__(self, base_dim, style_dim, n_downsample, n_res, mlp_dim):
        super().__init__()
        self.content_encoder = ContentEncoder(1, base_dim, n_downsample, n_res)
        self.style_encoder = StyleEncoder(1, base_dim, style_dim)
        self.decoder = Decoder(self.content_encoder.output_dim, 1, n_downsample, n_res)
        self.mlp = MLP(style_dim, self._num_adain_params(), mlp_dim)

    def _adain_layers(self):
        return [m for m in self.decoder.modules() if isinstance(m, AdaptiveInstanceNorm2d)]

    def _num_adain_params(self):
        return sum(2 * m.num_features for m in self._adain_layers())

    def _assign_adain(self, params):
        cursor = 0
        for m in self._adain_layers():
            n = m.num_features
            m.bias = params[:, cursor:cursor + n].reshape(-1)
            m.weight = params[:, cursor + n:cursor + 2 * n].reshape(-1)
            cursor += 2 * n

    def encode(self, x):
        return self.content_encoder(x), self.style_encoder(x)

    def decode(self, content, style):
        self._assign_adain(self.mlp(style))
        return self.decoder(content)


class PatchDiscriminator(nn.Module):
    """Single-scale patch discriminator trained with the least-squares loss."""

    def __init__(self, base_dim=64, n_layers=4):
        super().__init__()
        layers = [ConvBlock(1, base_dim, 4, 2, 1, activation="lrelu")]
        dim = base_dim
        for _ in range(n_layers - 1):
            layers.append(ConvBlock(dim, 2 * dim, 4, 2, 1, activation="lrelu"))
            dim *= 2
        layers.append(nn.Conv2d(dim, 1, 1))
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)

    def loss_dis(self, fake, real):
        return ((self(fake) - 0) ** 2).mean() + ((self(real) - 1) ** 2).mean()

    def loss_gen(self, fake):
        return ((self(fake) - 1) ** 2).mean()


class TranslatorNets(nn.Module):
    """Both domain generators plus their discriminators.

    Domains are addressed as "source" and "target"; `encode`/`decode` pick
    the per-domain nets so translation is just decoding a source content
    code with the target decoder.
    """

    def __init__(self, base_dim, style_dim, n_downsample, n_res, mlp_dim, img_size):
        super().__init__()
        self.arch = {
            "base_dim": base_dim, "style_dim": style_dim,
            "n_downsample": n_downsample, "n_res": n_res,
            "mlp_dim": mlp_dim, "img_size": img_size,
        }
        self.gen = nn.ModuleDict({
            "source": DomainGenerator(base_dim, style_dim, n_downsample, n_res, mlp_dim),
            "target": DomainGenerator(base_dim, style_dim, n_downsample, n_res, mlp_dim),
        })
        self.dis = nn.ModuleDict({
            "source": PatchDiscriminator(base_dim),
            "target": PatchDiscriminator(base_dim),
        })

    def _check_size(self, x):
        size = self.arch["img_size"]
        if x.shape[-2:] != (size, size):
            raise ValueError(f"expected {size}x{size} input, got {tuple(x.shape[-2:])}")

    def encode(self, x, domain):
        self._check_size(x)
        return self.gen[domain].encode(x)

    def decode(self, content, style, domain):
        out = self.gen[domain].decode(content, style)
        self._check_size(out)
        return out

    def translate(self, x, style, src_domain, dst_domain):
        content, _ = self.encode(x, src_domain)
        return self.decode(content, style, dst_domain)
