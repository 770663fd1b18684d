"""Illumination Learning Branch: channel-token attention gated by the
light-up feature (MIAB) inside a 2-stage symmetric encoder-decoder.

Each channel of the token matrix is an attention token; similarities are
d_k x d_k, so cost is linear in pixel count. The attention matrix is
normalized along the key-channel axis (each column sums to 1).
"""

from __future__ import annotations

import numpy as np

from .tensor import (ContractViolation, Prng, Tensor, concat, div, gelu,
                     layer_norm, matmul, mul, permute, reshape, softmax)
from . import nn


def init_miab(params: dict, prefix: str, channels: int, heads: int,
              train_hw: tuple, rng: Prng) -> None:
    if channels % heads:
        raise ContractViolation(f"channels {channels} not divisible by heads {heads}")
    d = channels // heads
    nn.param_const(params, prefix + ".ln1.g", np.ones(channels))
    nn.param_const(params, prefix + ".ln1.b", np.zeros(channels))
    nn.param_const(params, prefix + ".ln2.g", np.ones(channels))
    nn.param_const(params, prefix + ".ln2.b", np.zeros(channels))
    nn.param_normal(params, prefix + ".wq", (heads, d, d), rng, fan_in=d)
    nn.param_normal(params, prefix + ".wk", (heads, d, d), rng, fan_in=d)
    nn.param_normal(params, prefix + ".wv", (heads, d, d), rng, fan_in=d)
    nn.param_const(params, prefix + ".alpha", np.ones(heads))
    nn.param_normal(params, prefix + ".wo", (channels, channels), rng, fan_in=channels)
    nn.param_zeros(params, prefix + ".pos", (train_hw[0] * train_hw[1], channels))
    nn.init_conv(params, prefix + ".ffn1", 2 * channels, channels, 1, rng)
    nn.init_conv(params, prefix + ".ffnd", 2 * channels, 2 * channels, 3, rng,
                 groups=2 * channels)
    nn.init_conv(params, prefix + ".ffn2", channels, 2 * channels, 1, rng)


def ig_attention(x: Tensor, y: Tensor, params: dict, prefix: str,
                 heads: int, cur_hw: tuple, train_hw: tuple) -> Tensor:
    """Illumination-guided channel attention over tokens [N, HW, C]."""
    if x.shape != y.shape:
        raise ContractViolation(f"token shapes differ: {x.shape} vs {y.shape}")
    alpha = params[prefix + ".alpha"]
    if np.any(alpha.data == 0.0):
        raise ContractViolation("attention scale alpha must be nonzero")
    xh = nn.split_heads(x, heads)                      # [N, k, HW, d]
    yh = nn.split_heads(y, heads)
    q = matmul(xh, permute(params[prefix + ".wq"], (0, 2, 1)))
    k = matmul(xh, permute(params[prefix + ".wk"], (0, 2, 1)))
    v = matmul(xh, permute(params[prefix + ".wv"], (0, 2, 1)))
    scores = div(matmul(permute(k, (0, 1, 3, 2)), q),
                 reshape(alpha, (1, heads, 1, 1)))     # [N, k, d, d]
    attn = softmax(scores, axis=-2)
    out = matmul(mul(yh, v), attn)                     # [N, k, HW, d]
    out = matmul(nn.merge_heads(out), permute(params[prefix + ".wo"], (1, 0)))
    pos = nn.resize_grid(params[prefix + ".pos"], train_hw, cur_hw)
    return out + reshape(pos, (1,) + pos.shape)


def miab_forward(f_in: Tensor, f_lu: Tensor, params: dict, prefix: str,
                 heads: int, train_hw: tuple) -> Tensor:
    """One MIAB: pre-norm residual attention, then a residual feed-forward."""
    if f_in.shape != f_lu.shape:
        raise ContractViolation(f"MIAB input shapes differ: {f_in.shape} vs {f_lu.shape}")
    n, c, h, w = f_in.shape
    x = nn.to_tokens(f_in)
    y = nn.to_tokens(f_lu)
    xn = layer_norm(x, params[prefix + ".ln1.g"], params[prefix + ".ln1.b"])
    x = x + ig_attention(xn, y, params, prefix, heads, (h, w), train_hw)
    z = layer_norm(x, params[prefix + ".ln2.g"], params[prefix + ".ln2.b"])
    z = nn.to_map(z, h, w)
    z = gelu(nn.apply_conv(params, prefix + ".ffn1", z))
    z = nn.apply_conv(params, prefix + ".ffnd", z, padding=1, groups=2 * c)
    z = nn.apply_conv(params, prefix + ".ffn2", z)
    x = x + nn.to_tokens(z)
    return nn.to_map(x, h, w)


def init_ilb(params: dict, prefix: str, channels: int, heads: tuple,
             blocks: tuple, train_res: int, rng: Prng) -> None:
    c = channels
    hw = (train_res, train_res)
    hw2 = (train_res // 2, train_res // 2)
    hw4 = (train_res // 4, train_res // 4)
    nn.init_conv(params, prefix + ".entry", c, 3, 3, rng)
    for i in range(blocks[0]):
        init_miab(params, f"{prefix}.enc0.m{i}", c, heads[0], hw, rng)
    nn.init_conv(params, prefix + ".down1", 2 * c, c, 4, rng)
    for i in range(blocks[1]):
        init_miab(params, f"{prefix}.enc1.m{i}", 2 * c, heads[1], hw2, rng)
    nn.init_conv(params, prefix + ".down2", 4 * c, 2 * c, 4, rng)
    for i in range(blocks[2]):
        init_miab(params, f"{prefix}.mid.m{i}", 4 * c, heads[2], hw4, rng)
    nn.init_deconv(params, prefix + ".up1", 4 * c, 2 * c, 2, rng)
    nn.init_conv(params, prefix + ".fuse1", 2 * c, 4 * c, 1, rng)
    for i in range(blocks[1]):
        init_miab(params, f"{prefix}.dec1.m{i}", 2 * c, heads[1], hw2, rng)
    nn.init_deconv(params, prefix + ".up0", 2 * c, c, 2, rng)
    nn.init_conv(params, prefix + ".fuse0", c, 2 * c, 1, rng)
    for i in range(blocks[0]):
        init_miab(params, f"{prefix}.dec0.m{i}", c, heads[0], hw, rng)
    nn.init_conv(params, prefix + ".flu1", 2 * c, c, 4, rng)
    nn.init_conv(params, prefix + ".flu2", 4 * c, 2 * c, 4, rng)
    # zero-init exit: the branch is an exact no-op at start
    nn.init_conv(params, prefix + ".exit", 3, c, 3, rng, zero=True)


def ilb_forward(i_lu: Tensor, f_lu: Tensor, params: dict, prefix: str,
                heads: tuple, blocks: tuple, train_res: int) -> Tensor:
    n, _, h, w = i_lu.shape
    if h % 4 or w % 4:
        raise ContractViolation(f"ilb_forward needs H, W divisible by 4, got {h}x{w}")
    hw = (train_res, train_res)
    hw2 = (train_res // 2,) * 2
    hw4 = (train_res // 4,) * 2
    flu0 = f_lu
    flu1 = nn.apply_conv(params, prefix + ".flu1", flu0, stride=2, padding=1)
    flu2 = nn.apply_conv(params, prefix + ".flu2", flu1, stride=2, padding=1)

    x = nn.apply_conv(params, prefix + ".entry", i_lu, padding=1)
    for i in range(blocks[0]):
        x = miab_forward(x, flu0, params, f"{prefix}.enc0.m{i}", heads[0], hw)
    e0 = x
    x = nn.apply_conv(params, prefix + ".down1", x, stride=2, padding=1)
    for i in range(blocks[1]):
        x = miab_forward(x, flu1, params, f"{prefix}.enc1.m{i}", heads[1], hw2)
    e1 = x
    x = nn.apply_conv(params, prefix + ".down2", x, stride=2, padding=1)
    for i in range(blocks[2]):
        x = miab_forward(x, flu2, params, f"{prefix}.mid.m{i}", heads[2], hw4)
    x = nn.apply_deconv(params, prefix + ".up1", x, stride=2)
    x = nn.apply_conv(params, prefix + ".fuse1", concat([x, e1], axis=1))
    for i in range(blocks[1]):
        x = miab_forward(x, flu1, params, f"{prefix}.dec1.m{i}", heads[1], hw2)
    x = nn.apply_deconv(params, prefix + ".up0", x, stride=2)
    x = nn.apply_conv(params, prefix + ".fuse0", concat([x, e0], axis=1))
    for i in range(blocks[0]):
        x = miab_forward(x, flu0, params, f"{prefix}.dec0.m{i}", heads[0], hw)
    return nn.apply_conv(params, prefix + ".exit", x, padding=1)
