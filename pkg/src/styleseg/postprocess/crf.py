"""Slice-wise dense-CRF refinement by mean-field inference.

Model: unary = -log(input probabilities), pairwise = Potts (penalty 1 for
differing labels) under two Gaussian kernels, a spatial smoothness kernel
and a joint spatial/intensity (bilateral) one. With Potts compatibility
the label-independent part of the message drops out in the softmax, so an
update step is

    Q <- softmax_c( log p_c + w1 * M1_c + w2 * M2_c ),
    Mk_c(i) = sum_{j != i} kernel_k(i, j) Q_c(j).

Two execution paths:

* exact: full O(N^2) message passing, intended for slices up to ~64x64.
  The N x N kernel matrix is built either by the compiled extension
  (preferred, selected at import) or by a pure-numpy fallback; inference
  itself is a matmul per iteration either way.
* fast: truncated separable correlation for the smoothness kernel and a
  bilateral-grid approximation (splat / blur / slice) for the appearance
  kernel; linear in pixels, usable at any slice size.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from ..config import CrfConfig
from ..datamodel import ProbMap, Volume

try:  # compiled kernel is optional; fall back to numpy transparently
    from . import _crf_native

    HAVE_NATIVE = True
except ImportError:  # pragma: no cover - depends on build environment
    _crf_native = None
    HAVE_NATIVE = False

PROB_FLOOR = 1e-8
# The numpy fallback materializes an N x N float64 matrix; refuse sizes
# where that exceeds ~300 MB.
NUMPY_EXACT_MAX_PIXELS = 6144


class CrfError(Exception):
    pass


def active_engine() -> str:
    return "native" if HAVE_NATIVE else "numpy"


def _features(image: np.ndarray, params: CrfConfig):
    h, w = image.shape
    rows, cols = np.mgrid[0:h, 0:w]
    pos = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.float64)
    feat_s = pos / params.sigma_spatial
    feat_b = np.concatenate(
        [pos / params.sigma_bilateral_spatial,
         image.reshape(-1, 1).astype(np.float64) / params.sigma_bilateral_intensity],
        axis=1,
    )
    return feat_s, feat_b


def _kernel_matrix_numpy(feat_s, feat_b, w1, w2) -> np.ndarray:
    def gauss(feat):
        sq = ((feat[:, None, :] - feat[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-0.5 * sq)

    out = w1 * gauss(feat_s) + w2 * gauss(feat_b)
    np.fill_diagonal(out, 0.0)
    return out


def build_kernel_matrix(image: np.ndarray, params: CrfConfig,
                        engine: str | None = None) -> np.ndarray:
    """Combined pairwise weight matrix with zero diagonal."""
    feat_s, feat_b = _features(image, params)
    engine = engine or active_engine()
    if engine == "native":
        if not HAVE_NATIVE:
            raise CrfError("native engine requested but the extension is not built")
        return _crf_native.build_combined_kernel(
            np.ascontiguousarray(feat_s), np.ascontiguousarray(feat_b),
            params.weight_smooth, params.weight_bilateral,
        )
    if engine != "numpy":
        raise CrfError(f"unknown engine {engine!r}")
    n = feat_s.shape[0]
    if n > NUMPY_EXACT_MAX_PIXELS:
        raise CrfError(
            f"{n} pixels exceeds the numpy exact-path limit "
            f"({NUMPY_EXACT_MAX_PIXELS}); use method='fast'"
        )
    return _kernel_matrix_numpy(feat_s, feat_b, params.weight_smooth, params.weight_bilateral)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def _refine_exact(probs, image, params: CrfConfig, engine=None) -> np.ndarray:
    c, h, w = probs.shape
    kernel = build_kernel_matrix(image, params, engine)
    logp = np.log(np.clip(probs.reshape(c, -1).astype(np.float64), PROB_FLOOR, None))
    q = np.exp(logp) / np.exp(logp).sum(axis=0, keepdims=True)
    for _ in range(params.iterations):
        messages = q @ kernel.T  # (C, N); kernel symmetric but keep orientation explicit
        q = _softmax(logp + messages)
    return q.reshape(c, h, w)


# -- fast path --------------------------------------------------------------


def _truncated_gauss_1d(sigma: float, truncate: float) -> np.ndarray:
    radius = int(np.ceil(truncate * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-0.5 * (t / sigma) ** 2)


def _smooth_messages(q2d: np.ndarray, sigma: float, truncate: float) -> np.ndarray:
    """Unnormalized truncated Gaussian sum over the image, minus the self term."""
    k = _truncated_gauss_1d(sigma, truncate)
    out = correlate1d(q2d, k, axis=-1, mode="constant")
    out = correlate1d(out, k, axis=-2, mode="constant")
    return out - q2d


class _BilateralExpansion:
    """Approximate bilateral message pass by expanding the intensity kernel.

    The bilateral kernel factorizes into a spatial Gaussian (computed
    exactly by truncated separable correlation) and an intensity Gaussian,
    which is interpolated on a uniform node grid with 4-point cubic
    Lagrange weights; the approximation error falls as grid_step**4. The
    self pair is removed using its own interpolated weight so the residual
    error comes from the j != i terms only.
    """

    MAX_NODES = 4096

    def __init__(self, image: np.ndarray, params: CrfConfig):
        self.shape = image.shape
        self.sigma_spatial = params.sigma_bilateral_spatial
        self.truncate = params.truncate
        intens = image.ravel().astype(np.float64)
        delta = params.grid_step * params.sigma_bilateral_intensity
        lo = intens.min()
        n_nodes = int(np.ceil((intens.max() - lo) / delta)) + 4
        if n_nodes > self.MAX_NODES:
            raise CrfError(
                f"intensity range needs {n_nodes} interpolation nodes; "
                "increase crf.grid_step or normalize the image"
            )
        pos = (intens - lo) / delta + 1.0
        anchor = np.clip(np.floor(pos).astype(np.int64), 1, n_nodes - 3)
        u = pos - anchor
        stencil = np.stack([
            -u * (u - 1) * (u - 2) / 6,
            (u + 1) * (u - 1) * (u - 2) / 2,
            -(u + 1) * u * (u - 2) / 2,
            (u + 1) * u * (u - 1) / 6,
        ])  # weights for nodes anchor-1 .. anchor+2
        self.basis = np.zeros((n_nodes, intens.size))
        cols = np.arange(intens.size)
        for off in range(4):
            np.add.at(self.basis, (anchor - 1 + off, cols), stencil[off])
        nodes = lo + (np.arange(n_nodes) - 1.0) * delta
        self.node_gauss = np.exp(
            -0.5 * ((intens[None, :] - nodes[:, None])
                    / params.sigma_bilateral_intensity) ** 2
        )  # (n_nodes, N): exact intensity kernel evaluated at the nodes
        self.self_weight = (self.basis * self.node_gauss).sum(axis=0)
        self.active = np.flatnonzero(np.abs(self.basis).max(axis=1) > 0)

    def apply(self, q_flat: np.ndarray) -> np.ndarray:
        """q_flat: (C, N) -> approximate bilateral sums (C, N), self term removed."""
        h, w = self.shape
        kern = _truncated_gauss_1d(self.sigma_spatial, self.truncate)
        out = np.zeros_like(q_flat)
        for k in self.active:
            weighted = self.basis[k][None, :] * q_flat  # (C, N)
            m = weighted.reshape(-1, h, w)
            m = correlate1d(m, kern, axis=-1, mode="constant")
            m = correlate1d(m, kern, axis=-2, mode="constant")
            out += self.node_gauss[k][None, :] * m.reshape(-1, h * w)
        return out - self.self_weight[None, :] * q_flat


def _refine_fast(probs, image, params: CrfConfig) -> np.ndarray:
    c, h, w = probs.shape
    logp = np.log(np.clip(probs.reshape(c, -1).astype(np.float64), PROB_FLOOR, None))
    q = np.exp(logp) / np.exp(logp).sum(axis=0, keepdims=True)
    expansion = _BilateralExpansion(image, params) if params.weight_bilateral > 0 else None
    for _ in range(params.iterations):
        msg = np.zeros_like(q)
        if params.weight_smooth > 0:
            smooth = np.stack(
                [_smooth_messages(q[ch].reshape(h, w), params.sigma_spatial,
                                  params.truncate).ravel() for ch in range(c)]
            )
            msg += params.weight_smooth * smooth
        if expansion is not None:
            msg += params.weight_bilateral * expansion.apply(q)
        q = _softmax(logp + msg)
    return q.reshape(c, h, w)


# -- public entry points ----------------------------------------------------


def crf_refine_slice(probs: np.ndarray, image: np.ndarray, params: CrfConfig,
                     method: str | None = None, engine: str | None = None) -> np.ndarray:
    """Refine one slice. probs: (C, H, W), image: (H, W) normalized."""
    probs = np.asarray(probs, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if probs.ndim != 3 or probs.shape[1:] != image.shape:
        raise CrfError(f"shape mismatch: probs {probs.shape} vs image {image.shape}")
    method = method or params.method
    if params.iterations == 0 or (params.weight_smooth == 0 and params.weight_bilateral == 0):
        return probs.copy()  # no pairwise energy: the input is the fixed point
    if method == "auto":
        method = "exact" if image.size <= params.exact_max_pixels else "fast"
    if method == "exact":
        return _refine_exact(probs, image, params, engine)
    if method == "fast":
        return _refine_fast(probs, image, params)
    raise CrfError(f"unknown method {method!r}")


def crf_refine_volume(probmap: ProbMap, volume: Volume, params: CrfConfig,
                      method: str | None = None) -> ProbMap:
    out = np.empty_like(probmap.probs, dtype=np.float32)
    for s in range(volume.shape[0]):
        out[:, s] = crf_refine_slice(probmap.probs[:, s], volume.voxels[s], params, method)
    return ProbMap(out)
