"""Shared parameter-initialization and layout helpers for the network modules."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Prng, Tensor, conv2d, matmul, permute, reshape


def param_normal(params: dict, name: str, shape, rng: Prng, fan_in: int) -> Tensor:
    t = Tensor(rng.normal(shape, std=1.0 / math.sqrt(fan_in)), requires_grad=True)
    params[name] = t
    return t


def param_zeros(params: dict, name: str, shape) -> Tensor:
    from .tensor import default_dtype
    t = Tensor(np.zeros(shape, dtype=default_dtype()), requires_grad=True)
    params[name] = t
    return t


def param_const(params: dict, name: str, values) -> Tensor:
    t = Tensor(np.asarray(values), requires_grad=True)
    params[name] = t
    return t


def init_conv(params: dict, name: str, cout: int, cin: int, k: int, rng: Prng,
              groups: int = 1, zero: bool = False, bias: bool = True) -> None:
    shape = (cout, cin // groups, k, k)
    if zero:
        param_zeros(params, name + ".w", shape)
    else:
        param_normal(params, name + ".w", shape, rng, fan_in=(cin // groups) * k * k)
    if bias:
        param_zeros(params, name + ".b", (cout,))


def init_deconv(params: dict, name: str, cin: int, cout: int, k: int, rng: Prng) -> None:
    param_normal(params, name + ".w", (cin, cout, k, k), rng, fan_in=cin * k * k)


def apply_conv(params: dict, name: str, x: Tensor, stride: int = 1, padding: int = 0,
               groups: int = 1) -> Tensor:
    return conv2d(x, params[name + ".w"], params.get(name + ".b"),
                  stride=stride, padding=padding, groups=groups)


def apply_deconv(params: dict, name: str, x: Tensor, stride: int) -> Tensor:
    from .tensor import conv_transpose2d
    return conv_transpose2d(x, params[name + ".w"], stride=stride)


def to_tokens(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, H*W, C]."""
    n, c, h, w = x.shape
    return reshape(permute(x, (0, 2, 3, 1)), (n, h * w, c))


def to_map(x: Tensor, h: int, w: int) -> Tensor:
    """[N, H*W, C] -> [N, C, H, W]."""
    n, hw, c = x.shape
    return permute(reshape(x, (n, h, w, c)), (0, 3, 1, 2))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[N, HW, C] -> [N, heads, HW, C/heads]."""
    n, hw, c = x.shape
    return permute(reshape(x, (n, hw, heads, c // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """[N, heads, HW, d] -> [N, HW, heads*d]."""
    n, k, hw, d = x.shape
    return reshape(permute(x, (0, 2, 1, 3)), (n, hw, k * d))


def bilinear_matrix(out_len: int, in_len: int, dtype) -> np.ndarray:
    """Align-corners interpolation matrix [out_len, in_len]."""
    m = np.zeros((out_len, in_len), dtype=dtype)
    if in_len == 1 or out_len == 1:
        m[:, 0] = 1.0
        return m
    scale = (in_len - 1) / (out_len - 1)
    for i in range(out_len):
        pos = i * scale
        lo = min(int(math.floor(pos)), in_len - 2)
        frac = pos - lo
        m[i, lo] += 1.0 - frac
        m[i, lo + 1] += frac
    return m


def resize_grid(p: Tensor, src_hw: tuple, dst_hw: tuple) -> Tensor:
    """Bilinearly resize a [H*W, C] grid tensor to a new spatial resolution."""
    h, w = src_hw
    ho, wo = dst_hw
    if (h, w) == (ho, wo):
        return p
    c = p.shape[1]
    grid = permute(reshape(p, (h, w, c)), (2, 0, 1))
    rh = Tensor(bilinear_matrix(ho, h, p.dtype))
    rw = Tensor(bilinear_matrix(wo, w, p.dtype).T)
    out = matmul(matmul(rh, grid), rw)
    return reshape(permute(out, (1, 2, 0)), (ho * wo, c))
