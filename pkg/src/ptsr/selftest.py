"""Fast end-to-end invariant and gradient checks, runnable from the CLI."""

import math
import time
import warnings
from dataclasses import dataclass

import torch

from .discriminator import Discriminator, DiscriminatorConfig, concat_condition
from .generator import Generator, GeneratorConfig, upsample, upsample2, zero_generator
from .gradcheck import check_gradients
from .losses import (LossConfig, discriminator_loss, generator_adv_loss, reconstruction_loss,
                     total_generator_loss)
from .metrics import psnr, ssim
from .patch_ops import merge_patches, split_into_patches
from .transformer import TransformerConfig, TransformerStack

GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _randomize(module: torch.nn.Module, gen: torch.Generator, std: float = 0.3) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * std)


def check_roundtrip() -> tuple[bool, str]:
    gen = torch.Generator().manual_seed(0)
    for size in (8, 16, 64):
        img = torch.rand(2, 3, size, size, generator=gen)
        if not torch.equal(merge_patches(split_into_patches(img, 8), size, size), img):
            return False, f"roundtrip failed at {size}x{size}"
    return True, "exact at 8, 16, 64"


def check_transformer_grad() -> tuple[bool, str]:
    gen = torch.Generator().manual_seed(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stack = TransformerStack(TransformerConfig(depth=2, d=8, heads=2)).double()
    _randomize(stack, gen)
    v = torch.randn(1, 4, 8, generator=gen, dtype=torch.float64)
    pe = torch.randn(1, 4, 8, generator=gen, dtype=torch.float64)
    w = torch.randn(1, 4, 8, generator=gen, dtype=torch.float64)
    errs = check_gradients(lambda: (stack(v, pe) * w).sum(), dict(stack.named_parameters()))
    worst = max(errs.values())
    return worst < GRAD_TOL, f"max rel err {worst:.2e}"


def check_generator_grad() -> tuple[bool, str]:
    gen = torch.Generator().manual_seed(2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = Generator(GeneratorConfig(height=8, width=8, k=2, depth=1, heads=2)).double()
    _randomize(g, gen, std=0.1)
    x = 0.35 + 0.3 * torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64)
    w = torch.randn(1, 3, 16, 16, generator=gen, dtype=torch.float64)
    errs = check_gradients(lambda: (g.forward_2x(x) * w).sum(), dict(g.named_parameters()),
                           max_entries=8)
    worst = max(errs.values())
    return worst < GRAD_TOL, f"max rel err {worst:.2e}"


def check_discriminator_grad() -> tuple[bool, str]:
    gen = torch.Generator().manual_seed(3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = Discriminator(DiscriminatorConfig(height=16, width=16, k=8, d=16, depth=2, heads=2)).double()
    _randomize(d, gen, std=0.1)
    x6 = torch.rand(2, 6, 16, 16, generator=gen, dtype=torch.float64)
    errs = check_gradients(lambda: d(x6).sum(), dict(d.named_parameters()), max_entries=8)
    worst = max(errs.values())
    return worst < GRAD_TOL, f"max rel err {worst:.2e}"


def check_residual_identity() -> tuple[bool, str]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = Generator(GeneratorConfig(height=16, width=16, k=8, depth=1))
    zero_generator(g)
    x = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(4))
    with torch.no_grad():
        ok2 = torch.equal(g.forward_2x(x), upsample2(x).clamp(0, 1))
        ok4 = torch.equal(g.forward_4x(x), upsample2(upsample2(x).clamp(0, 1)).clamp(0, 1))
    return ok2 and ok4, f"2x exact={ok2}, 4x exact={ok4}"


def check_losses() -> tuple[bool, str]:
    gen = torch.Generator().manual_seed(5)
    y_r, y_s, a, b = (torch.rand(2, 3, 8, 8, generator=gen, dtype=torch.float64) for _ in range(4))
    inv = abs(reconstruction_loss(y_r, y_s, a).item() - reconstruction_loss(y_r, y_s, b).item())
    zero = reconstruction_loss(y_r, y_r, a).item()
    half = torch.full((3,), 0.5, dtype=torch.float64)
    ln2 = abs(generator_adv_loss(half).item() - math.log(2.0))
    ln2d = abs(discriminator_loss(half, half).item() - math.log(2.0))
    comp = total_generator_loss(torch.tensor(1.0), torch.tensor(1.0), LossConfig()).item()
    ok = inv < 1e-9 and zero == 0.0 and ln2 < 1e-6 and ln2d < 1e-6 and abs(comp - 1.0) < 1e-12
    return ok, f"X_up invariance {inv:.1e}, L_R(Y,Y)={zero}, BCE(0.5)-ln2={ln2:.1e}"


def check_loss_grad() -> tuple[bool, str]:
    gen = torch.Generator().manual_seed(6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = Discriminator(DiscriminatorConfig(height=8, width=8, k=4, d=8, depth=1, heads=2)).double()
    x_up = torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64)
    y_r = torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64)
    y_s = (y_r + 0.1 + 0.2 * torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64)).requires_grad_(True)

    def total():
        adv = generator_adv_loss(d.logits(concat_condition(x_up, y_s)), from_logits=True)
        return total_generator_loss(adv, reconstruction_loss(y_r, y_s, x_up))

    err = check_gradients(total, {"y_s": y_s})["y_s"]
    return err < GRAD_TOL, f"rel err {err:.2e}"


def check_metrics() -> tuple[bool, str]:
    a = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(7), dtype=torch.float64)
    p = psnr(a, a + 0.1)
    s = ssim(a, a)
    return abs(p - 20.0) < 1e-6 and s == 1.0, f"PSNR(0.1 offset)={p:.9f}, SSIM(a,a)={s}"


def check_upsample_consistency() -> tuple[bool, str]:
    x = torch.rand(1, 3, 4, 4, generator=torch.Generator().manual_seed(8))
    ok = torch.equal(upsample(x, 4), upsample2(upsample2(x)))
    return ok, "upsample(4) == upsample2 twice"


CHECKS = [
    ("patch roundtrip", check_roundtrip),
    ("transformer gradient", check_transformer_grad),
    ("generator gradient", check_generator_grad),
    ("discriminator gradient", check_discriminator_grad),
    ("total generator loss gradient", check_loss_grad),
    ("residual identity", check_residual_identity),
    ("loss identities", check_losses),
    ("metric fixed points", check_metrics),
    ("upsample composition", check_upsample_consistency),
]


def run_selftest(echo=print) -> bool:
    ok_all = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, reported like the rest
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        dt = time.perf_counter() - t0
        ok_all &= ok
        echo(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({dt:.1f}s)")
    return ok_all
