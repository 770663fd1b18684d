"""Light Component Predictor: illumination prior, light-up feature, lit image."""

from __future__ import annotations

from dataclasses import dataclass

from .tensor import ContractViolation, Prng, Tensor, concat, mul, reduce_mean
from . import nn


@dataclass
class LcpOutput:
    i_lu: Tensor        # lit image, [N, 3, H, W]
    f_lu: Tensor        # light-up feature, [N, C, H, W]
    l_tilde: Tensor     # learned brightening map, [N, 3, H, W]


def illumination_prior(image: Tensor) -> Tensor:
    """Per-pixel mean over the three color channels, [N, 1, H, W]."""
    if image.ndim != 4 or image.shape[1] != 3:
        raise ContractViolation(f"illumination_prior expects [N,3,H,W], got {image.shape}")
    return reduce_mean(image, axes=(1,), keepdims=True)


def init_lcp(params: dict, prefix: str, channels: int, rng: Prng) -> None:
    nn.init_conv(params, prefix + ".embed", channels, 4, 1, rng)
    nn.init_conv(params, prefix + ".depth", channels, channels, 5, rng, groups=channels)
    nn.init_conv(params, prefix + ".light", 3, channels, 1, rng)


def lcp_forward(image: Tensor, prior: Tensor, params: dict, prefix: str = "lcp") -> LcpOutput:
    if prior.shape != (image.shape[0], 1) + image.shape[2:]:
        raise ContractViolation(f"prior shape {prior.shape} does not match image {image.shape}")
    c = params[prefix + ".embed.w"].shape[0]
    z = concat([image, prior], axis=1)
    z = nn.apply_conv(params, prefix + ".embed", z)
    f_lu = nn.apply_conv(params, prefix + ".depth", z, padding=2, groups=c)
    l_tilde = nn.apply_conv(params, prefix + ".light", f_lu)
    i_lu = mul(image, l_tilde)
    return LcpOutput(i_lu=i_lu, f_lu=f_lu, l_tilde=l_tilde)
