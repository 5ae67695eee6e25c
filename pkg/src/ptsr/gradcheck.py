"""Central finite-difference gradient checking, independent of autograd's backward pass."""

import torch

# Gradients whose norm is below this are compared on an absolute scale; e.g. an
# attention key bias has an identically zero gradient (softmax shift invariance).
NORM_FLOOR = 1e-5


@torch.no_grad()
def numeric_grad(fn, tensor: torch.Tensor, indices, h: float = 1e-4) -> torch.Tensor:
    """``(f(x + h e_i) - f(x - h e_i)) / 2h`` for each flat index ``i``."""
    flat = tensor.view(-1)
    out = torch.empty(len(indices), dtype=torch.float64)
    for j, i in enumerate(indices):
        orig = flat[i].item()
        flat[i] = orig + h
        f_plus = float(fn())
        flat[i] = orig - h
        f_minus = float(fn())
        flat[i] = orig
        out[j] = (f_plus - f_minus) / (2.0 * h)
    return out


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    a, n = analytic.double().reshape(-1), numeric.double().reshape(-1)
    scale = max(a.norm().item(), n.norm().item(), NORM_FLOOR)
    return (a - n).norm().item() / scale


def check_gradients(fn, named: dict[str, torch.Tensor], h: float = 1e-4,
                    max_entries: int | None = None, seed: int = 0) -> dict[str, float]:
    """Per-tensor relative error between autograd and central differences.

    ``fn`` takes no arguments and returns a scalar built from the tensors in
    ``named`` (which must require grad). With ``max_entries`` only a seeded
    random subset of entries of each larger tensor is probed.
    """
    tensors = list(named.values())
    value = fn()
    grads = torch.autograd.grad(value, tensors, allow_unused=True)
    gen = torch.Generator().manual_seed(seed)
    errors = {}
    for (name, t), g in zip(named.items(), grads):
        g = torch.zeros_like(t) if g is None else g
        n = t.numel()
        if max_entries is None or n <= max_entries:
            idx = list(range(n))
        else:
            idx = torch.randperm(n, generator=gen)[:max_entries].tolist()
        num = numeric_grad(fn, t.data, idx, h)
        errors[name] = relative_error(g.reshape(-1)[idx], num)
    return errors
