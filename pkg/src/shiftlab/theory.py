"""Closed-form predictions: MSE decomposition under symmetric shifts, asymptotic variances."""

from __future__ import annotations

from dataclasses import dataclass

from .dist_core import (
    IDENTITY_SCALING,
    ConditionalJoint,
    ProxyScaling,
    conditional_variances,
    noise_terms,
)
from .errors import KappaOutOfRange, LinearProxyNotAsserted, ZeroMassCovariate

METHODS = ("A", "B_scaled", "C")


@dataclass(frozen=True)
class MseBreakdown:
    """Predicted mean squared error of one method, split into its sources.

    ``total`` excludes the second-order remainder; ``cross_term_bound`` is the
    size allowed for it (kappa_m1 * kappa_m2 * noise_x).
    """

    method: str
    term_shift_m2: float
    term_k1: float
    term_proxy_bias: float = 0.0
    term_proxy_resid: float = 0.0
    cross_term_bound: float = 0.0

    @property
    def total(self) -> float:
        return self.term_shift_m2 + self.term_k1 + self.term_proxy_bias + self.term_proxy_resid


def _check_kappa(name: str, kappa: float) -> None:
    # kappa = 0 is accepted here as the null-shift limit of the formulas
    if not 0 <= kappa < 1:
        raise KappaOutOfRange(f"{name} must lie in [0, 1), got {kappa!r}")


def theorem1_predict(
    joint_m2: ConditionalJoint,
    scaling: ProxyScaling = IDENTITY_SCALING,
    kappa_m2: float = 0.1,
    kappa_m1: float = 0.05,
    weights=None,
) -> dict[str, MseBreakdown]:
    """First-order MSE of tau^A, scaled tau^B and tau^C under two symmetric shifts.

    MSE_A = k2 * noise_x + K1
    MSE_C = k2 * noise_full + K1
    MSE_B = proxy_bias + k2 * proxy_resid + K1
    with K1 = k1 * noise_x; all expectations weighted by ``weights`` (default
    the joint's covariate marginal).
    """
    _check_kappa("kappa_m2", kappa_m2)
    _check_kappa("kappa_m1", kappa_m1)
    nt = noise_terms(joint_m2, scaling, weights)
    k1 = kappa_m1 * nt.noise_x
    cross = kappa_m1 * kappa_m2 * nt.noise_x
    return {
        "A": MseBreakdown("A", kappa_m2 * nt.noise_x, k1, cross_term_bound=cross),
        "B_scaled": MseBreakdown(
            "B_scaled",
            0.0,
            k1,
            term_proxy_bias=nt.proxy_bias,
            term_proxy_resid=kappa_m2 * nt.proxy_resid,
            cross_term_bound=cross,
        ),
        "C": MseBreakdown("C", kappa_m2 * nt.noise_full, k1, cross_term_bound=cross),
    }


@dataclass(frozen=True)
class AsymptoticVariances:
    """Limits of n * Var(estimate at x) with n = n_m1 + n_m2 and rho = n_m1 / n_m2."""

    at_x: object
    rho: float
    sigma2_A: float
    sigma2_C: float
    sigma2_B: float | None = None


def asymptotic_variances(joint: ConditionalJoint, x, rho: float, linear_proxy: bool = False) -> AsymptoticVariances:
    """sigma^2 for the sample-proportion estimators at covariate ``x``.

    sigma2_B is only returned when the caller asserts ``linear_proxy`` (that
    E[Y2 | Y1, X] is affine in Y1); the formula is meaningless otherwise.
    """
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho!r}")
    i = joint.alphabet.x_index(x)
    p = float(joint.px[i])
    if p <= 0:
        raise ZeroMassCovariate(f"P(X={x!r}) = 0")
    total, explained, resid = conditional_variances(joint, i)
    s_a = (1 + rho) * total / p
    s_c = (1 + rho) / rho * explained / p + (1 + rho) * resid / p
    s_b = (1 + rho) / rho * explained / p if linear_proxy else None
    return AsymptoticVariances(x, float(rho), s_a, s_c, s_b)


def require_sigma2_B(av: AsymptoticVariances) -> float:
    if av.sigma2_B is None:
        raise LinearProxyNotAsserted("sigma2_B needs an explicit linear-proxy assertion")
    return av.sigma2_B
