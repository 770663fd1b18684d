"""Structure Enhancement Branch: depthwise-enriched channel attention with
illumination gating (SEAB) inside a 4-level symmetric encoder-decoder.

The illumination map is derived inside the branch from the lit image as its
per-pixel channel mean, average-pooled to each level's resolution.
"""

from __future__ import annotations

import numpy as np

from .tensor import (ContractViolation, Prng, Tensor, concat, div, gelu,
                     layer_norm, matmul, mul, permute, reduce_mean, reshape,
                     softmax)
from . import nn


def init_seab(params: dict, prefix: str, channels: int, heads: int, rng: Prng) -> None:
    if channels % heads:
        raise ContractViolation(f"channels {channels} not divisible by heads {heads}")
    nn.param_const(params, prefix + ".ln.g", np.ones(channels))
    nn.param_const(params, prefix + ".ln.b", np.zeros(channels))
    for name in ("q", "k", "v"):
        nn.init_conv(params, f"{prefix}.{name}p", channels, channels, 1, rng, bias=False)
        nn.init_conv(params, f"{prefix}.{name}d", channels, channels, 3, rng,
                     groups=channels, bias=False)
    nn.param_const(params, prefix + ".beta", np.ones(heads))
    nn.init_conv(params, prefix + ".proj", channels, channels, 1, rng, bias=False)
    nn.init_conv(params, prefix + ".g1", channels, channels, 1, rng)
    nn.init_conv(params, prefix + ".gd", channels, channels, 3, rng, groups=channels)
    nn.init_conv(params, prefix + ".g2", channels, channels, 1, rng)


def seab_attention(t: Tensor, params: dict, prefix: str, heads: int) -> Tensor:
    """Transposed channel attention over a layer-normalized map; residual."""
    beta = params[prefix + ".beta"]
    if np.any(beta.data == 0.0):
        raise ContractViolation("attention temperature beta must be nonzero")
    n, c, h, w = t.shape
    xn = layer_norm(nn.to_tokens(t), params[prefix + ".ln.g"], params[prefix + ".ln.b"])
    xn = nn.to_map(xn, h, w)
    q = nn.apply_conv(params, prefix + ".qd",
                      nn.apply_conv(params, prefix + ".qp", xn), padding=1, groups=c)
    k = nn.apply_conv(params, prefix + ".kd",
                      nn.apply_conv(params, prefix + ".kp", xn), padding=1, groups=c)
    v = nn.apply_conv(params, prefix + ".vd",
                      nn.apply_conv(params, prefix + ".vp", xn), padding=1, groups=c)
    qh = nn.split_heads(nn.to_tokens(q), heads)        # [N, k, HW, d]
    kh = nn.split_heads(nn.to_tokens(k), heads)
    vh = nn.split_heads(nn.to_tokens(v), heads)
    scores = div(matmul(permute(kh, (0, 1, 3, 2)), qh),
                 reshape(beta, (1, heads, 1, 1)))      # [N, k, d, d]
    attn = softmax(scores, axis=-2)
    out = nn.merge_heads(matmul(vh, attn))
    out = nn.apply_conv(params, prefix + ".proj", nn.to_map(out, h, w))
    return out + t


def seab_forward(t: Tensor, l_map: Tensor, params: dict, prefix: str, heads: int) -> Tensor:
    """SEAB: attention, illumination gating, post-gating conv stack, residual."""
    if l_map.shape[0] != t.shape[0] or l_map.shape[2:] != t.shape[2:]:
        raise ContractViolation(
            f"illumination map {l_map.shape} does not match feature {t.shape}")
    c = t.shape[1]
    a = seab_attention(t, params, prefix, heads)
    g = mul(a, l_map)
    g = nn.apply_conv(params, prefix + ".g1", g)
    g = gelu(nn.apply_conv(params, prefix + ".gd", g, padding=1, groups=c))
    g = nn.apply_conv(params, prefix + ".g2", g)
    return a + g


def _avg_pool2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    y = reshape(x, (n, c, h // 2, 2, w // 2, 2))
    return reduce_mean(y, axes=(3, 5))


def init_seb(params: dict, prefix: str, channels: int, heads: tuple,
             blocks: tuple, refine: int, rng: Prng) -> None:
    c = channels
    widths = (c, 2 * c, 4 * c, 8 * c)
    nn.init_conv(params, prefix + ".embed", c, 3, 3, rng)
    for lvl in range(4):
        for i in range(blocks[lvl]):
            init_seab(params, f"{prefix}.enc{lvl}.s{i}", widths[lvl], heads[lvl], rng)
        if lvl < 3:
            nn.init_conv(params, f"{prefix}.down{lvl}", widths[lvl + 1], widths[lvl], 4, rng)
    for lvl in (2, 1):
        nn.init_deconv(params, f"{prefix}.up{lvl}", widths[lvl + 1], widths[lvl], 2, rng)
        nn.init_conv(params, f"{prefix}.fuse{lvl}", widths[lvl], 2 * widths[lvl], 1, rng)
        for i in range(blocks[lvl]):
            init_seab(params, f"{prefix}.dec{lvl}.s{i}", widths[lvl], heads[lvl], rng)
    # top level: concatenation kept at 2*C, no halving
    nn.init_deconv(params, prefix + ".up0", widths[1], widths[0], 2, rng)
    for i in range(blocks[0]):
        init_seab(params, f"{prefix}.dec0.s{i}", 2 * c, heads[1], rng)
    for i in range(refine):
        init_seab(params, f"{prefix}.ref.s{i}", 2 * c, heads[1], rng)
    nn.init_conv(params, prefix + ".exit", 3, 2 * c, 3, rng, zero=True)


def seb_forward(i_lu: Tensor, params: dict, prefix: str, heads: tuple,
                blocks: tuple, refine: int, collect: dict | None = None) -> Tensor:
    n, _, h, w = i_lu.shape
    if h % 8 or w % 8:
        raise ContractViolation(f"seb_forward needs H, W divisible by 8, got {h}x{w}")
    lmaps = [reduce_mean(i_lu, axes=(1,), keepdims=True)]
    for _ in range(3):
        lmaps.append(_avg_pool2(lmaps[-1]))

    x = nn.apply_conv(params, prefix + ".embed", i_lu, padding=1)
    skips = []
    for lvl in range(3):
        for i in range(blocks[lvl]):
            x = seab_forward(x, lmaps[lvl], params, f"{prefix}.enc{lvl}.s{i}", heads[lvl])
        skips.append(x)
        x = nn.apply_conv(params, f"{prefix}.down{lvl}", x, stride=2, padding=1)
    for i in range(blocks[3]):
        x = seab_forward(x, lmaps[3], params, f"{prefix}.enc3.s{i}", heads[3])
    if collect is not None:
        collect["latent"] = x
    for lvl in (2, 1):
        x = nn.apply_deconv(params, f"{prefix}.up{lvl}", x, stride=2)
        x = nn.apply_conv(params, f"{prefix}.fuse{lvl}", concat([x, skips[lvl]], axis=1))
        for i in range(blocks[lvl]):
            x = seab_forward(x, lmaps[lvl], params, f"{prefix}.dec{lvl}.s{i}", heads[lvl])
    x = nn.apply_deconv(params, prefix + ".up0", x, stride=2)
    x = concat([x, skips[0]], axis=1)
    for i in range(blocks[0]):
        x = seab_forward(x, lmaps[0], params, f"{prefix}.dec0.s{i}", heads[1])
    for i in range(refine):
        x = seab_forward(x, lmaps[0], params, f"{prefix}.ref.s{i}", heads[1])
    return nn.apply_conv(params, prefix + ".exit", x, padding=1)
