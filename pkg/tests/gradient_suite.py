"""Central finite-difference gradient checks for every loss function.

Shared by the unit tests and the acceptance suite: each differentiable loss
is probed at 100 randomly sampled coordinates of random 4x4 double inputs,
comparing autograd against (f(x+h) - f(x-h)) / 2h with h = 1e-4.
"""
import numpy as np
import torch

from vtcd import losses as L
from vtcd.networks import FrozenEncoder, IdentityEncoder

STEP = 1e-4
N_COORDS = 100


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def check_gradient(fn, args, wrt: int, rng: np.random.Generator) -> float:
    """Max relative error between autograd and central differences."""
    tensors = [torch.tensor(a, dtype=torch.float64) for a in args]
    tensors[wrt].requires_grad_(True)
    loss = fn(*tensors)
    loss.backward()
    grad = tensors[wrt].grad.detach().numpy()

    base = [t.detach().numpy().copy() for t in tensors]
    worst = 0.0
    flat_size = base[wrt].size
    for _ in range(N_COORDS):
        idx = np.unravel_index(rng.integers(flat_size), base[wrt].shape)
        plus = [b.copy() for b in base]
        minus = [b.copy() for b in base]
        plus[wrt][idx] += STEP
        minus[wrt][idx] -= STEP
        f_plus = float(fn(*[torch.tensor(p, dtype=torch.float64) for p in plus]))
        f_minus = float(fn(*[torch.tensor(m, dtype=torch.float64) for m in minus]))
        fd = (f_plus - f_minus) / (2 * STEP)
        worst = max(worst, _rel_err(fd, float(grad[idx])))
    return worst


def run_gradient_suite(seed: int = 0):
    """Returns [(loss name, max relative error)] for every loss."""
    rng = np.random.default_rng(seed)

    def rand():
        return rng.random((4, 4))

    identity_enc = IdentityEncoder()
    frozen_enc = FrozenEncoder(channels=4, hidden=8, seed=7).double()

    def content_identity(pred, ref):
        return L.content_loss(pred, ref, identity_enc)

    def content_frozen(pred, ref):
        return L.content_loss(pred, ref, frozen_enc)

    cases = [
        ("adversarial_d/real", L.adversarial_d, (rand(), rand()), 0),
        ("adversarial_d/fake", L.adversarial_d, (rand(), rand()), 1),
        ("adversarial_g", L.adversarial_g, (rand(),), 0),
        ("cycle_consistency", L.cycle_consistency, (rand(), rand()), 1),
        ("identity_loss", L.identity_loss, (rand(), rand()), 1),
        ("tv_loss", L.tv_loss, (rand(),), 0),
        ("content_loss/identity", content_identity, (rand(), rand()), 0),
        ("content_loss/encoder", content_frozen, (rand(), rand()), 0),
        ("diffusion_loss", L.diffusion_loss, (rand(), rand()), 1),
    ]
    results = []
    for name, fn, args, wrt in cases:
        results.append((name, check_gradient(fn, args, wrt, rng)))
    return results
