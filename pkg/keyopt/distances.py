"""
Distribution similarity measures between 1-D vote samples.

Two Wasserstein paths are provided: the exact empirical W1 (used by the loss
and the optimizers) and a learned critic with gradient penalty, plus the
KL / JS / cross-entropy divergences over histograms.
"""

import logging
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import rel_entr, xlogy
from scipy.stats import wasserstein_distance
from torch import nn

from .exceptions import BinMismatchError, InvalidShapeError, NonFiniteLossError

logger = logging.getLogger(__name__)

CRITIC_HIDDEN = (32, 32)
LEAKY_SLOPE = 0.01
DEFAULT_LAMBDA = 10.0
DEFAULT_EPSILON = 1e-12
DEFAULT_CRITIC_STEPS = 500
DEFAULT_CRITIC_LR = 5e-3
# Adam betas used by WGAN-GP critics.
CRITIC_BETAS = (0.5, 0.9)


class DivergenceKind(str, Enum):
    KL = "kl"
    JS = "js"
    CE = "ce"


def _samples(values):
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise InvalidShapeError("empty sample set")
    return arr


# ------------------- Exact Wasserstein -------------------

def wasserstein1_exact(samples_a, samples_b):
    """
    Exact W1 between two empirical distributions. Equal sizes use the sorted
    pairing; otherwise the integral of |CDF_A - CDF_B| over the merged support.
    """
    a = _samples(samples_a)
    b = _samples(samples_b)
    if a.size == b.size:
        return float(np.abs(np.sort(a) - np.sort(b)).mean())
    return float(wasserstein_distance(a, b))


def wasserstein1_with_gradient(samples_a, samples_b):
    """
    W1 for equal-size sample sets by sorted pairing, with its subgradient
    with respect to every sample. Stable sorts fix the pairing at ties.
    """
    a = _samples(samples_a)
    b = _samples(samples_b)
    if a.size != b.size:
        raise InvalidShapeError("sorted pairing needs equally sized sample sets")
    ia = np.argsort(a, kind="stable")
    ib = np.argsort(b, kind="stable")
    diff = a[ia] - b[ib]
    sign = np.sign(diff) / a.size
    grad_a = np.empty_like(a)
    grad_b = np.empty_like(b)
    grad_a[ia] = sign
    grad_b[ib] = -sign
    return float(np.abs(diff).mean()), grad_a, grad_b


def _check_edges(hist_a, hist_b):
    if not np.array_equal(hist_a.bin_edges, hist_b.bin_edges):
        raise BinMismatchError("histograms have different bin edges")


def wasserstein1_hist(hist_a, hist_b):
    _check_edges(hist_a, hist_b)
    cdf_gap = np.abs(np.cumsum(hist_a.mass) - np.cumsum(hist_b.mass))
    return float(np.dot(cdf_gap, hist_a.widths))


# ------------------- Divergences -------------------

def _smoothed(mass, epsilon):
    smoothed = np.asarray(mass, dtype=np.float64) + epsilon
    return smoothed / smoothed.sum()


def divergence(kind, hist_p, hist_q, epsilon=DEFAULT_EPSILON):
    """KL(p||q), JS(p, q) or cross-entropy H(p, q) in nats after epsilon smoothing."""
    kind = DivergenceKind(kind)
    _check_edges(hist_p, hist_q)
    if not epsilon > 0.0:
        raise InvalidShapeError("epsilon must be positive")
    p = _smoothed(hist_p.mass, epsilon)
    q = _smoothed(hist_q.mass, epsilon)

    if kind is DivergenceKind.KL:
        return float(rel_entr(p, q).sum())
    if kind is DivergenceKind.JS:
        m = (p + q) / 2.0
        return float(0.5 * rel_entr(p, m).sum() + 0.5 * rel_entr(q, m).sum())
    return float(-xlogy(p, q).sum())


# ------------------- Critic -------------------

class CriticModel(nn.Module):
    """
    Scalar critic: two hidden layers (affine, layer norm, leaky rectifier),
    a linear head and a learned linear bypass from input to output.
    """

    def __init__(self, hidden=CRITIC_HIDDEN, negative_slope=LEAKY_SLOPE):
        super().__init__()
        widths = (1,) + tuple(hidden)
        self.layers = nn.ModuleList(nn.Linear(i, o) for i, o in zip(widths[:-1], widths[1:]))
        self.norms = nn.ModuleList(nn.LayerNorm(w) for w in hidden)
        self.head = nn.Linear(widths[-1], 1)
        self.skip = nn.Parameter(torch.zeros(1))
        self.negative_slope = negative_slope
        self.double()

    def forward(self, x):
        x = x.reshape(-1, 1)
        h = x
        for layer, norm in zip(self.layers, self.norms):
            h = F.leaky_relu(norm(layer(h)), self.negative_slope)
        return (self.head(h) + self.skip * x).reshape(-1)

    @classmethod
    def identity(cls):
        """A critic computing D(x) = x exactly."""
        critic = cls()
        with torch.no_grad():
            critic.head.weight.zero_()
            critic.head.bias.zero_()
            critic.skip.fill_(1.0)
        return critic

    def input_gradient(self, x):
        """dD/dx at each sample, as a numpy array."""
        xt = torch.as_tensor(np.asarray(x, dtype=np.float64)).reshape(-1).clone().requires_grad_(True)
        (grad,) = torch.autograd.grad(self(xt).sum(), xt)
        return grad.detach().numpy()

    def evaluate(self, x):
        with torch.no_grad():
            return self(torch.as_tensor(np.asarray(x, dtype=np.float64))).numpy()


def make_critic(rng_seed=0):
    with torch.random.fork_rng():
        torch.manual_seed(rng_seed)
        return CriticModel()


def _interpolates(a, b, rng):
    """Uniform convex combinations of randomly paired samples."""
    m = max(a.size, b.size)
    pa = a[rng.integers(a.size, size=m)]
    pb = b[rng.integers(b.size, size=m)]
    u = rng.random(m)
    return u * pa + (1.0 - u) * pb


def gradient_penalty(critic, x):
    x = x.detach().clone().requires_grad_(True)
    (grad,) = torch.autograd.grad(critic(x).sum(), x, create_graph=True)
    return ((grad.abs() - 1.0) ** 2).mean()


def critic_wasserstein(samples_a, samples_b, critic, lam=DEFAULT_LAMBDA, rng_seed=0):
    """
    (loss, gp_term) with loss = E[D(A)] - E[D(B)] + lam * gp_term, the
    penalty taken at interpolates drawn with rng_seed.
    """
    a = _samples(samples_a)
    b = _samples(samples_b)
    if lam < 0.0:
        raise InvalidShapeError("lambda must be non-negative")
    x = torch.from_numpy(_interpolates(a, b, np.random.default_rng(rng_seed)))
    gp = gradient_penalty(critic, x)
    with torch.no_grad():
        gap = critic(torch.from_numpy(a)).mean() - critic(torch.from_numpy(b)).mean()
    gp_term = float(gp.detach())
    return float(gap) + lam * gp_term, gp_term


def critic_distance(samples_a, samples_b, critic):
    """Critic estimate of W1: E[D(A)] - E[D(B)]."""
    return float(critic.evaluate(_samples(samples_a)).mean() - critic.evaluate(_samples(samples_b)).mean())


def train_critic(
    samples_a,
    samples_b,
    steps=DEFAULT_CRITIC_STEPS,
    lr=DEFAULT_CRITIC_LR,
    lam=DEFAULT_LAMBDA,
    rng_seed=0,
):
    """
    Gradient ascent on E[D(A)] - E[D(B)] - lam * penalty. Deterministic per
    seed: the same seed drives parameter init and interpolate sampling.
    """
    a = _samples(samples_a)
    b = _samples(samples_b)
    if int(steps) < 1:
        raise InvalidShapeError("steps must be at least 1")

    critic = make_critic(rng_seed)
    optimizer = torch.optim.Adam(critic.parameters(), lr=lr, betas=CRITIC_BETAS)
    rng = np.random.default_rng(rng_seed)
    ta = torch.from_numpy(a)
    tb = torch.from_numpy(b)

    for step in range(int(steps)):
        x = torch.from_numpy(_interpolates(a, b, rng))
        optimizer.zero_grad()
        gap = critic(ta).mean() - critic(tb).mean()
        objective = -gap + lam * gradient_penalty(critic, x)
        if not torch.isfinite(objective):
            raise NonFiniteLossError(step)
        objective.backward()
        optimizer.step()

    logger.debug("Critic trained for %d steps, final gap %.6f", steps, float(gap.detach()))
    return critic
