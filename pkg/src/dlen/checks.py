"""Self-contained verification suites: finite-difference gradient checks and
structural self-tests.  Shared by the CLI (gradcheck / selftest subcommands)
and the test suite, so both report from one implementation.

All gradient checks run in 64-bit and compare backward() against central
finite differences.  The comparison is norm-relative: max|g - fd| divided by
max(1, max|fd|), which keeps the tolerance meaningful when gradients are
large while not inflating errors of near-zero gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import ilb as ilb_mod
from . import lcp as lcp_mod
from . import nn
from . import seb as seb_mod
from . import wavelet
from . import tensor as T
from .model import DlenConfig, dlen_forward, init_params
from .tensor import Prng, Tensor


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value < self.tolerance)

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{status:4s} {self.name:32s} {self.value:.3e} < {self.tolerance:.0e}"


def _rel_err(got: np.ndarray, want: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(want).max()) if want.size else 0.0)
    return float(np.abs(got - want).max()) / scale


def _check_inputs(name: str, build: Callable[[], List[Tensor]],
                  f: Callable[[List[Tensor]], Tensor],
                  tol: float = 1e-4, h: float = 1e-5) -> CheckResult:
    """Backward vs finite differences on every differentiable input of f."""
    with T.autocast64():
        xs = build()
        out = f(xs)
        out.backward()
        worst = 0.0
        for i, x in enumerate(xs):
            def scalar(t, i=i):
                ys = [t if j == i else xj for j, xj in enumerate(xs)]
                return f(ys).item()
            fd = T.finite_diff_grad(scalar, x, h)
            got = x.grad if x.grad is not None else np.zeros_like(x.data)
            worst = max(worst, _rel_err(got, fd))
    return CheckResult(name, worst, tol)


def _leaf(rng: Prng, shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(shape, std=scale, dtype=np.float64), requires_grad=True)


def _quad(y: Tensor) -> Tensor:
    """A smooth scalar readout (kinks like |.| degrade finite differences)."""
    w = Tensor(0.5 + 0.1 * np.cos(np.arange(y.size, dtype=np.float64)).reshape(y.shape))
    return T.reduce_sum(T.mul(T.mul(y, y), w))


def gradient_suite(progress: Callable[[str], None] | None = None) -> List[CheckResult]:
    """Per-operation and whole-model gradient checks (criterion: 1e-4 / 1e-3)."""
    results: List[CheckResult] = []

    def run(name, build, f, tol=1e-4):
        if progress:
            progress(name)
        results.append(_check_inputs(name, build, f, tol))

    rng = Prng(2024)

    run("conv2d_3x3_pad", lambda: [_leaf(rng, (2, 3, 6, 6)),
                                   _leaf(rng, (4, 3, 3, 3), 0.4),
                                   _leaf(rng, (4,), 0.2)],
        lambda xs: _quad(T.conv2d(xs[0], xs[1], xs[2], stride=1, padding=1)))
    run("conv2d_stride2", lambda: [_leaf(rng, (2, 4, 8, 8)),
                                   _leaf(rng, (6, 4, 4, 4), 0.3)],
        lambda xs: _quad(T.conv2d(xs[0], xs[1], stride=2, padding=1)))
    run("conv2d_depthwise", lambda: [_leaf(rng, (2, 4, 6, 6)),
                                     _leaf(rng, (4, 1, 3, 3), 0.5),
                                     _leaf(rng, (4,), 0.2)],
        lambda xs: _quad(T.conv2d(xs[0], xs[1], xs[2], padding=1, groups=4)))
    run("conv2d_grouped", lambda: [_leaf(rng, (2, 4, 5, 5)),
                                   _leaf(rng, (6, 2, 3, 3), 0.4)],
        lambda xs: _quad(T.conv2d(xs[0], xs[1], padding=1, groups=2)))
    run("conv_transpose2d", lambda: [_leaf(rng, (2, 3, 4, 4)),
                                     _leaf(rng, (3, 5, 2, 2), 0.5)],
        lambda xs: _quad(T.conv_transpose2d(xs[0], xs[1], stride=2)))
    run("matmul", lambda: [_leaf(rng, (2, 3, 4, 5)), _leaf(rng, (2, 3, 5, 6))],
        lambda xs: _quad(T.matmul(xs[0], xs[1])))
    run("softmax", lambda: [_leaf(rng, (3, 5, 4))],
        lambda xs: _quad(T.softmax(xs[0], axis=-2)))
    run("layer_norm", lambda: [_leaf(rng, (2, 7, 6)), _leaf(rng, (6,)),
                               _leaf(rng, (6,), 0.3)],
        lambda xs: _quad(T.layer_norm(xs[0], xs[1], xs[2])))
    run("gelu", lambda: [_leaf(rng, (4, 9))],
        lambda xs: _quad(T.gelu(xs[0])))
    run("reflect_pad2d", lambda: [_leaf(rng, (2, 3, 4, 5))],
        lambda xs: _quad(T.reflect_pad2d(xs[0], (1, 1, 2, 1))))

    def block_check(name, init, fwd, channels=4, hw=4, extra_inputs=1, tol=1e-4):
        if progress:
            progress(name)
        with T.autocast64():
            params: dict = {}
            init(params)
            # perturb away from the zero-initialized exits so gradients flow
            prng = Prng(77)
            for key, p in params.items():
                if not np.any(p.data):
                    p.data = p.data + prng.normal(p.shape, std=0.05, dtype=np.float64)
            names = sorted(params)
            xs = [params[k] for k in names]

            def f(ts):
                local = dict(zip(names, ts))
                return fwd(local)
            results.append(_check_inputs(name, lambda: xs, f, tol))

    rng_b = Prng(31)
    x_tok = Tensor(rng_b.normal((1, 16, 4)), dtype=np.float64)
    y_tok = Tensor(rng_b.normal((1, 16, 4)), dtype=np.float64)
    block_check("ig_attention",
                lambda p: ilb_mod.init_miab(p, "m", 4, 2, (4, 4), Prng(5)),
                lambda p: _quad(ilb_mod.ig_attention(x_tok, y_tok, p, "m", 2,
                                                     (4, 4), (4, 4))))
    x_map = Tensor(rng_b.normal((1, 4, 4, 4)), dtype=np.float64)
    block_check("seab_attention",
                lambda p: seb_mod.init_seab(p, "s", 4, 2, Prng(6)),
                lambda p: _quad(seb_mod.seab_attention(x_map, p, "s", 2)))
    x_feat = Tensor(rng_b.normal((1, 4, 6, 6)), dtype=np.float64)
    block_check("lwn_forward",
                lambda p: wavelet.init_lwn(p, "lwn", 4, Prng(7)),
                lambda p: _quad(wavelet.lwn_forward(x_feat, p, "lwn")))
    img = Tensor(rng_b.uniform(1 * 3 * 6 * 6).reshape(1, 3, 6, 6),
                 dtype=np.float64)
    block_check("lcp_forward",
                lambda p: lcp_mod.init_lcp(p, "lcp", 4, Prng(8)),
                lambda p: _quad(lcp_mod.lcp_forward(
                    img, lcp_mod.illumination_prior(img), p, "lcp").i_lu))

    results.append(whole_model_check(progress=progress))
    return results


def whole_model_check(samples_per_param: int = 4, tol: float = 1e-3,
                      progress: Callable[[str], None] | None = None) -> CheckResult:
    """Backward vs sampled central differences for every parameter of a tiny
    model (1x3x8x8 input, C=4).  Zero-initialized exits are perturbed so every
    branch carries gradient."""
    if progress:
        progress("whole_model")
    with T.autocast64():
        cfg = DlenConfig(width=4, seb_width=4, ilb_heads=(1, 2, 2),
                         seb_heads=(1, 2, 2, 4), train_res=8)
        model = init_params(cfg, seed=3)
        prng = Prng(99)
        for p in model.params.values():
            if not np.any(p.data):
                p.data = p.data + prng.normal(p.shape, std=0.05, dtype=np.float64)
        x = Tensor(prng.uniform(1 * 3 * 8 * 8).reshape(1, 3, 8, 8))
        target = Tensor(prng.uniform(1 * 3 * 8 * 8).reshape(1, 3, 8, 8))

        def loss_value() -> float:
            out = dlen_forward(x, model)
            d = T.sub(out.i_en, target)
            return T.reduce_mean(T.mul(d, d)).item()

        out = dlen_forward(x, model)
        d = T.sub(out.i_en, target)
        T.reduce_mean(T.mul(d, d)).backward()

        worst = 0.0
        pick = Prng(4242)
        h = 1e-5
        with T.no_grad():
            for name, p in sorted(model.params.items()):
                flat = p.data.reshape(-1)
                n = min(samples_per_param, flat.size)
                idx = sorted(set(int(i) for i in pick.randint(n, flat.size)))
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = loss_value()
                    flat[i] = orig - h
                    fm = loss_value()
                    flat[i] = orig
                    fd = (fp - fm) / (2 * h)
                    got = p.grad.reshape(-1)[i]
                    err = abs(got - fd) / max(1.0, abs(fd))
                    worst = max(worst, err)
    return CheckResult("whole_model", worst, tol)


# -- structural self-tests ---------------------------------------------------

def selftest_suite() -> List[CheckResult]:
    from . import metrics

    results: List[CheckResult] = []
    rng = Prng(11)

    # wavelet perfect reconstruction + energy conservation at Haar init
    taps: dict = {}
    wavelet.init_wavelet_taps(taps, "w")
    h0, h1 = taps["w.h0"], taps["w.h1"]
    pr_err = energy_err = 0.0
    with T.no_grad():
        for i in range(20):
            x = Tensor(rng.normal((1, 3, 8 + 2 * (i % 4), 10), dtype=np.float32))
            sub = wavelet.dwt2d(x, h0, h1)
            rec = wavelet.idwt2d(sub, h0, h1)
            pr_err = max(pr_err, float(np.abs(rec.data - x.data).max()))
            ex = float(np.sum(x.data.astype(np.float64) ** 2))
            es = sum(float(np.sum(s.data.astype(np.float64) ** 2)) for s in sub.as_list())
            energy_err = max(energy_err, abs(ex - es) / ex)
    results.append(CheckResult("wavelet_reconstruction", pr_err, 1e-5))
    results.append(CheckResult("wavelet_energy", energy_err, 1e-4))

    # metric oracles
    a = rng.uniform(16 * 16 * 3).reshape(16, 16, 3)
    b = rng.uniform(16 * 16 * 3).reshape(16, 16, 3)
    results.append(CheckResult(
        "ssim_window_oracle",
        abs(metrics.ssim_windowed(a, b) - ssim_windowed_oracle(a, b)), 1e-6))
    results.append(CheckResult(
        "psnr_formula", abs(metrics.psnr(np.zeros(4), np.full(4, 0.1)) - 20.0), 1e-9))
    checker = np.indices((8, 8)).sum(axis=0) % 2
    results.append(CheckResult(
        "ssim_global_anticorrelated",
        abs(metrics.ssim_global(checker.astype(float), 1.0 - checker) - (-0.99640)),
        1e-3))

    # determinism: same seed -> bitwise-identical init and forward
    cfg = DlenConfig(width=8, train_res=16)
    m1, m2 = init_params(cfg, 7), init_params(cfg, 7)
    same_params = all(np.array_equal(m1.params[k].data, m2.params[k].data)
                      for k in m1.params)
    x = Tensor(Prng(3).uniform(2 * 3 * 16 * 16).reshape(2, 3, 16, 16).astype(np.float32))
    with T.no_grad():
        o1 = dlen_forward(x, m1)
        o2 = dlen_forward(x, m2)
    same_fwd = np.array_equal(o1.i_en.data, o2.i_en.data)
    results.append(CheckResult("determinism", 0.0 if (same_params and same_fwd) else 1.0, 0.5))

    # init no-op + shape/latent contracts
    noop = float(np.abs(o1.i_en.data - o1.i_lu.data).max())
    results.append(CheckResult("init_noop", noop, 1e-12 + np.finfo(np.float32).tiny))
    shape_bad = 0.0
    cs = cfg.resolved_seb_width()
    for hw in (16, 24, 32):
        xi = Tensor(Prng(4).uniform(1 * 3 * hw * hw).reshape(1, 3, hw, hw).astype(np.float32))
        collect: dict = {}
        with T.no_grad():
            o = dlen_forward(xi, m1, collect=collect)
        if o.i_en.shape != (1, 3, hw, hw):
            shape_bad = 1.0
        if collect["latent"].shape != (1, 8 * cs, hw // 8, hw // 8):
            shape_bad = 1.0
    results.append(CheckResult("shape_latent", shape_bad, 0.5))
    return results


def ssim_windowed_oracle(a: np.ndarray, b: np.ndarray, l: float = 1.0) -> float:
    """Literal per-window double loop; the slow reference for ssim_windowed."""
    from . import metrics
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w = metrics.gaussian_window()
    size = w.shape[0]
    c1 = (metrics.SSIM_K1 * l) ** 2
    c2 = (metrics.SSIM_K2 * l) ** 2
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    vals = []
    for c in range(a.shape[2]):
        for i in range(a.shape[0] - size + 1):
            for j in range(a.shape[1] - size + 1):
                x = a[i:i + size, j:j + size, c]
                y = b[i:i + size, j:j + size, c]
                mx = (w * x).sum()
                my = (w * y).sum()
                vx = (w * x * x).sum() - mx * mx
                vy = (w * y * y).sum() - my * my
                cov = (w * x * y).sum() - mx * my
                vals.append(((2 * mx * my + c1) * (2 * cov + c2))
                            / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))
