"""Learnable wavelet module: Haar-initialized 1-d taps, 2-d subband
analysis/synthesis, and the residual frequency-domain block (LWN).

Analysis correlates each channel with the four 2x2 kernels built as outer
products of the low/high-pass taps; synthesis is the adjoint (transposed
stride-2 correlation) with the same taps, so the bank reconstructs exactly
while the taps stay orthonormal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .tensor import (ContractViolation, Prng, Tensor, concat, conv2d,
                     conv_transpose2d, gelu, narrow, reflect_pad2d, reshape)
from . import nn


HAAR_H0 = (1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0))
HAAR_H1 = (1.0 / math.sqrt(2.0), -1.0 / math.sqrt(2.0))


@dataclass
class Subbands:
    """One-level 2-d decomposition; all four bands are [N, C, H/2, W/2]."""
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor
    source_shape: tuple

    def as_list(self):
        return [self.ll, self.lh, self.hl, self.hh]


def init_wavelet_taps(params: dict, prefix: str) -> None:
    nn.param_const(params, prefix + ".h0", HAAR_H0)
    nn.param_const(params, prefix + ".h1", HAAR_H1)


def build_subband_kernels(h0: Tensor, h1: Tensor) -> Tensor:
    """Stack the four outer-product kernels as a [4, 1, 2, 2] filter bank.

    Row index comes from the first (vertical) filter, column index from the
    second (horizontal) one; order is ll, lh, hl, hh.
    """
    cols = {"l": reshape(h0, (2, 1)), "h": reshape(h1, (2, 1))}
    rows = {"l": reshape(h0, (1, 2)), "h": reshape(h1, (1, 2))}
    bank = []
    for a in "lh":
        for b in "lh":
            bank.append(reshape(cols[a] * rows[b], (1, 1, 2, 2)))
    return concat(bank, axis=0)


def dwt2d(x: Tensor, h0: Tensor, h1: Tensor) -> Subbands:
    """Per-channel stride-2 correlation with the four subband kernels."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractViolation(f"dwt2d needs even extents, got {h}x{w}")
    kernels = build_subband_kernels(h0, h1)
    flat = reshape(x, (n * c, 1, h, w))
    bands = conv2d(flat, kernels, stride=2)
    bands = reshape(bands, (n, c, 4, h // 2, w // 2))
    parts = [reshape(narrow(bands, 2, i, 1), (n, c, h // 2, w // 2)) for i in range(4)]
    return Subbands(*parts, source_shape=(h, w))


def idwt2d(sub: Subbands, h0: Tensor, h1: Tensor) -> Tensor:
    """Adjoint synthesis; inverts dwt2d exactly for orthonormal taps."""
    n, c, hh, ww = sub.ll.shape
    for t in sub.as_list():
        if t.shape != sub.ll.shape:
            raise ContractViolation("idwt2d subband shapes differ")
    kernels = build_subband_kernels(h0, h1)
    stacked = concat([reshape(t, (n, c, 1, hh, ww)) for t in sub.as_list()], axis=2)
    flat = reshape(stacked, (n * c, 4, hh, ww))
    rec = conv_transpose2d(flat, kernels, stride=2)
    return reshape(rec, (n, c, 2 * hh, 2 * ww))


def init_lwn(params: dict, prefix: str, channels: int, rng: Prng) -> None:
    init_wavelet_taps(params, prefix)
    nn.init_conv(params, prefix + ".proc1", 4 * channels, 4 * channels, 3, rng)
    # zero-init so the module starts as an exact identity
    nn.init_conv(params, prefix + ".proc2", 4 * channels, 4 * channels, 3, rng, zero=True)


def lwn_forward(x: Tensor, params: dict, prefix: str = "lwn") -> Tensor:
    """Wavelet-domain residual processing; shape-preserving for H, W >= 2."""
    n, c, h, w = x.shape
    h0, h1 = params[prefix + ".h0"], params[prefix + ".h1"]
    pb, pr = h % 2, w % 2
    padded = reflect_pad2d(x, (0, pb, 0, pr)) if (pb or pr) else x
    sub = dwt2d(padded, h0, h1)
    stack = concat(sub.as_list(), axis=1)
    delta = nn.apply_conv(params, prefix + ".proc1", stack, padding=1)
    delta = nn.apply_conv(params, prefix + ".proc2", gelu(delta), padding=1)
    stack = stack + delta
    parts = [narrow(stack, 1, i * c, c) for i in range(4)]
    rec = idwt2d(Subbands(*parts, source_shape=sub.source_shape), h0, h1)
    if pb or pr:
        rec = narrow(narrow(rec, 2, 0, h), 3, 0, w)
    return rec
