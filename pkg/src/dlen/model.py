"""DLEN assembly: LCP -> LWN -> {ILB, SEB} -> three-term composition,
plus initialization, the MAE objective, and one Adam training step."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .tensor import (Adam, ContractViolation, NonFiniteError, Prng, Tensor,
                     abs_, reduce_mean, sub)
from . import ilb as ilb_mod
from . import lcp as lcp_mod
from . import seb as seb_mod
from . import wavelet


@dataclass
class DlenConfig:
    width: int = 16                       # C, LCP/ILB base width
    seb_width: int = 0                    # C_s; 0 means C/2 rounded to even
    ilb_heads: tuple = (1, 2, 4)
    ilb_blocks: tuple = (1, 2, 2)         # level-0, level-1, bottleneck
    seb_heads: tuple = (1, 2, 4, 8)
    seb_blocks: tuple = (1, 1, 2, 2)
    seb_refine: int = 2
    use_lwn: bool = True
    use_seab: bool = True
    train_res: int = 128

    def resolved_seb_width(self) -> int:
        if self.seb_width:
            return self.seb_width
        half = self.width // 2
        return half if half % 2 == 0 else half + 1

    def validate(self) -> None:
        c, cs = self.width, self.resolved_seb_width()
        if c <= 0 or cs <= 0 or self.train_res % 8:
            raise ContractViolation(f"invalid config: C={c}, C_s={cs}, res={self.train_res}")
        for lvl, h in enumerate(self.ilb_heads):
            if (c * 2 ** lvl) % h:
                raise ContractViolation(f"ILB level {lvl}: width {c * 2 ** lvl} vs heads {h}")
        widths = (cs, 2 * cs, 4 * cs, 8 * cs)
        for lvl, h in enumerate(self.seb_heads):
            if widths[lvl] % h:
                raise ContractViolation(f"SEB level {lvl}: width {widths[lvl]} vs heads {h}")

    def to_dict(self) -> dict:
        return {
            "width": self.width, "seb_width": self.seb_width,
            "ilb_heads": list(self.ilb_heads), "ilb_blocks": list(self.ilb_blocks),
            "seb_heads": list(self.seb_heads), "seb_blocks": list(self.seb_blocks),
            "seb_refine": self.seb_refine, "use_lwn": self.use_lwn,
            "use_seab": self.use_seab, "train_res": self.train_res,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DlenConfig":
        return cls(width=d["width"], seb_width=d["seb_width"],
                   ilb_heads=tuple(d["ilb_heads"]), ilb_blocks=tuple(d["ilb_blocks"]),
                   seb_heads=tuple(d["seb_heads"]), seb_blocks=tuple(d["seb_blocks"]),
                   seb_refine=d["seb_refine"], use_lwn=d["use_lwn"],
                   use_seab=d["use_seab"], train_res=d["train_res"])


@dataclass
class DlenModel:
    config: DlenConfig
    params: dict  # name -> Tensor, insertion-ordered

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class EnhancedOutput:
    i_en: Tensor
    i_lu: Tensor
    i_flb: Tensor
    i_feb: Optional[Tensor]
    l_tilde: Tensor
    f_lu: Tensor


def init_params(config: DlenConfig, seed: int) -> DlenModel:
    """Deterministic parameter construction; same seed -> bitwise-same model."""
    config.validate()
    rng = Prng(seed)
    params: dict = {}
    c = config.width
    lcp_mod.init_lcp(params, "lcp", c, rng.fork(1))
    if config.use_lwn:
        wavelet.init_lwn(params, "lwn", c, rng.fork(2))
    ilb_mod.init_ilb(params, "ilb", c, config.ilb_heads, config.ilb_blocks,
                     config.train_res, rng.fork(3))
    if config.use_seab:
        seb_mod.init_seb(params, "seb", config.resolved_seb_width(),
                         config.seb_heads, config.seb_blocks, config.seb_refine,
                         rng.fork(4))
    return DlenModel(config=config, params=params)


def dlen_forward(image: Tensor, model: DlenModel,
                 collect: dict | None = None) -> EnhancedOutput:
    cfg = model.config
    n, ch, h, w = image.shape
    if ch != 3:
        raise ContractViolation(f"dlen_forward expects 3 channels, got {ch}")
    if h % 8 or w % 8:
        raise ContractViolation(f"dlen_forward needs H, W divisible by 8, got {h}x{w}")
    prior = lcp_mod.illumination_prior(image)
    out = lcp_mod.lcp_forward(image, prior, model.params)
    f_lu = out.f_lu
    if cfg.use_lwn:
        f_lu = wavelet.lwn_forward(f_lu, model.params)
    i_flb = ilb_mod.ilb_forward(out.i_lu, f_lu, model.params, "ilb",
                                cfg.ilb_heads, cfg.ilb_blocks, cfg.train_res)
    if cfg.use_seab:
        i_feb = seb_mod.seb_forward(out.i_lu, model.params, "seb",
                                    cfg.seb_heads, cfg.seb_blocks,
                                    cfg.seb_refine, collect=collect)
        i_en = out.i_lu + i_flb + i_feb
    else:
        i_feb = None
        i_en = out.i_lu + i_flb
    return EnhancedOutput(i_en=i_en, i_lu=out.i_lu, i_flb=i_flb, i_feb=i_feb,
                          l_tilde=out.l_tilde, f_lu=f_lu)


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ContractViolation(f"mae_loss shapes differ: {pred.shape} vs {target.shape}")
    return reduce_mean(abs_(sub(pred, target)))


def train_step(model: DlenModel, low: Tensor, high: Tensor, opt: Adam) -> float:
    """Forward, MAE, backward, Adam update; gradients are zeroed afterwards."""
    out = dlen_forward(low, model)
    loss = mae_loss(out.i_en, high)
    val = loss.item()
    if not np.isfinite(val):
        first = next((name for name, p in model.params.items()
                      if not np.all(np.isfinite(p.data))), "loss")
        raise NonFiniteError(f"non-finite training loss (first offender: {first})")
    loss.backward()
    opt.step()
    opt.zero_grad()
    return val
