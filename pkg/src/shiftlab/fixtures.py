"""Reference joints and random joint factories used by tests, experiments and the CLI."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from .dist_core import Alphabet, ChainJoint, ConditionalJoint, new_conditional_joint

BINARY = (0, 1)


def d0() -> ConditionalJoint:
    """Two covariates, binary outcomes; Y1 and Y2 agree often at x=0, independent at x=1."""
    alphabet = Alphabet(BINARY, BINARY, BINARY)
    table = [
        [[0.4, 0.1], [0.1, 0.4]],
        [[0.25, 0.25], [0.25, 0.25]],
    ]
    return new_conditional_joint(alphabet, [0.5, 0.5], table)


def bent_proxy_joint() -> ConditionalJoint:
    """Ternary proxy whose covariate means are not affinely related to the target's.

    E[Y1|X] = (0.5, 1.0, 1.5) while E[Y2|X] bends upward in the middle, so no
    single affine rescaling of the proxy is correct at every covariate.
    """
    alphabet = Alphabet((0, 1, 2), (0, 1, 2), BINARY)
    y1_given_x = np.array([[0.6, 0.3, 0.1], [0.25, 0.5, 0.25], [0.1, 0.3, 0.6]])
    y2_given_y1 = np.array(
        [
            [0.15, 0.35, 0.55],
            [0.55, 0.80, 0.95],
            [0.50, 0.65, 0.80],
        ]
    )  # P(Y2 = 1 | y1, x), rows indexed by x
    table = np.empty((3, 3, 2))
    table[:, :, 1] = y1_given_x * y2_given_y1
    table[:, :, 0] = y1_given_x * (1 - y2_given_y1)
    return new_conditional_joint(alphabet, [1 / 3, 1 / 3, 1 / 3], table)


def affine_proxy_joint() -> ConditionalJoint:
    """E[Y2 | Y1, X] = 0.2 + 0.3 * Y1 at every covariate, with a ternary proxy."""
    alphabet = Alphabet((0, 1), (0, 1, 2), BINARY)
    y1_given_x = np.array([[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]])
    p_y2 = 0.2 + 0.3 * np.array([0.0, 1.0, 2.0])
    table = np.empty((2, 3, 2))
    table[:, :, 1] = y1_given_x * p_y2
    table[:, :, 0] = y1_given_x * (1 - p_y2)
    return new_conditional_joint(alphabet, [0.5, 0.5], table)


def random_joint(
    rng: np.random.Generator,
    nx: int = 3,
    n1: int = 3,
    n2: int = 3,
    concentration: float = 1.0,
    values: bool = True,
) -> ConditionalJoint:
    """Strictly positive random joint; outcome values drawn at random when ``values``."""
    y1v = np.sort(rng.normal(size=n1)) if values else np.arange(n1, dtype=float)
    y2v = np.sort(rng.normal(size=n2)) if values else np.arange(n2, dtype=float)
    alphabet = Alphabet(tuple(range(nx)), tuple(range(n1)), tuple(range(n2)), y1v, y2v)
    px = rng.dirichlet(np.full(nx, 2.0))
    table = rng.dirichlet(np.full(n1 * n2, concentration), size=nx).reshape(nx, n1, n2)
    table = np.maximum(table, 1e-6)
    table /= table.sum(axis=(1, 2), keepdims=True)
    return new_conditional_joint(alphabet, px / px.sum(), table)


def conditionally_independent_joint(rng: np.random.Generator, nx=3, n1=3, n2=3) -> ConditionalJoint:
    """Random joint with Y2 independent of Y1 given X."""
    base = random_joint(rng, nx, n1, n2)
    p1 = rng.dirichlet(np.ones(n1), size=nx)
    p2 = rng.dirichlet(np.ones(n2), size=nx)
    return new_conditional_joint(base.alphabet, base.px, p1[:, :, None] * p2[:, None, :])


def diagonal_joint(rng: np.random.Generator, nx=3, n_levels=3) -> ConditionalJoint:
    """Random joint putting all mass on Y1 = Y2 (same levels, same values)."""
    values = np.sort(rng.normal(size=n_levels))
    levels = tuple(range(n_levels))
    alphabet = Alphabet(tuple(range(nx)), levels, levels, values, values)
    diag = rng.dirichlet(np.ones(n_levels), size=nx)
    table = np.zeros((nx, n_levels, n_levels))
    idx = np.arange(n_levels)
    table[:, idx, idx] = diag
    return new_conditional_joint(alphabet, rng.dirichlet(np.ones(nx)), table)


def random_chain(rng: np.random.Generator, nx: int, levels: tuple[int, ...]) -> ChainJoint:
    values = tuple(np.sort(rng.normal(size=k)) for k in levels)
    size = int(np.prod(levels))
    table = rng.dirichlet(np.ones(size), size=nx).reshape((nx,) + tuple(levels))
    return ChainJoint(tuple(range(nx)), values, rng.dirichlet(np.ones(nx)), table)


def latent_score_joint(
    n_x: int = 6,
    n_bins: int = 5,
    proxy_noise: float = 0.5,
    outcome_noise: float = 0.7,
    proxy_offset: float = 0.6,
    spread: float = 1.2,
) -> ConditionalJoint:
    """Discretised latent-ability model resembling test-score panels.

    Each covariate level has a latent ability A ~ N(mu_x, 1), with mu_x evenly
    spaced in [-spread, spread]. The proxy is ``A + offset_x + proxy_noise * e1``
    and the target ``A + outcome_noise * e2``, both cut into ``n_bins`` equal
    bins on [-2.5, 2.5] and valued 0..n_bins-1. ``offset_x`` alternates in sign
    across covariates, so the proxy is informative within a covariate cell but
    not an affine stand-in for the target across cells.
    """
    mu = np.linspace(-spread, spread, n_x)
    offset = proxy_offset * np.where(np.arange(n_x) % 2 == 0, 1.0, -1.0)
    edges = np.linspace(-2.5, 2.5, n_bins + 1)[1:-1]
    grid = np.linspace(-7.0, 7.0, 2801)

    def bin_probs(center, sd):
        cdf = norm.cdf((edges[None, :] - center[:, None]) / sd)
        cdf = np.hstack([np.zeros((len(center), 1)), cdf, np.ones((len(center), 1))])
        return np.diff(cdf, axis=1)

    table = np.empty((n_x, n_bins, n_bins))
    for x in range(n_x):
        w = norm.pdf(grid, mu[x], 1.0)
        w /= w.sum()
        p1 = bin_probs(grid + offset[x], proxy_noise)
        p2 = bin_probs(grid, outcome_noise)
        table[x] = np.einsum("a,ai,aj->ij", w, p1, p2)
    table = np.maximum(table, 1e-12)
    table /= table.sum(axis=(1, 2), keepdims=True)
    levels = tuple(range(n_bins))
    alphabet = Alphabet(tuple(range(n_x)), levels, levels)
    return new_conditional_joint(alphabet, np.full(n_x, 1.0 / n_x), table)


FIXTURES = {
    "D0": d0,
    "bent_proxy": bent_proxy_joint,
    "affine_proxy": affine_proxy_joint,
    "latent_score": latent_score_joint,
}
