"""Random distribution shifts of P(y1, y2 | x) and the covariate-permutation protocol."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincinv

from .dist_core import IDENTITY_TOL, ConditionalJoint, new_conditional_joint
from .errors import (
    ConfigError,
    EmptySampleSet,
    GeneratorError,
    KappaOutOfRange,
    ScaleOutOfRange,
    ZeroCellInBase,
    ZeroMarginalCell,
)

SHIFT_KINDS = ("symmetric_dirichlet", "asymmetric_marginal", "paired_perturbation")
CROSS_X_MODES = ("independent", "shared_seed")
ZERO_SUM_TOL = 1e-10
MAX_CONCENTRATION = 1e200


@dataclass(frozen=True, eq=False)
class ShiftDraw:
    """A realised shift S(y1, y2 | x); each covariate slice sums to zero."""

    delta: np.ndarray

    def __post_init__(self):
        delta = np.array(self.delta, dtype=np.float64)
        sums = delta.reshape(delta.shape[0], -1).sum(axis=1)
        if np.any(np.abs(sums) > ZERO_SUM_TOL):
            raise GeneratorError(f"shift does not sum to zero per covariate: {sums!r}")
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)


@dataclass(frozen=True)
class ShiftSpec:
    """Which generator to use and how strong.

    ``kappa`` is the shift strength for ``symmetric_dirichlet``, the scale for
    ``asymmetric_marginal`` and the magnitude for ``paired_perturbation``.
    ``y1_marginal_only`` restricts the paired perturbation to P(y1 | x), keeping
    P(y2 | y1, x) fixed.
    """

    kind: str = "symmetric_dirichlet"
    kappa: float = 0.1
    cross_x_mode: str = "independent"
    y1_marginal_only: bool = False

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ConfigError(f"unknown shift kind {self.kind!r}; choose from {SHIFT_KINDS}")
        if self.cross_x_mode not in CROSS_X_MODES:
            raise ConfigError(f"unknown cross_x_mode {self.cross_x_mode!r}")
        if self.kind == "symmetric_dirichlet":
            _check_kappa(self.kappa)
        elif self.kind == "asymmetric_marginal":
            _check_scale(self.kappa)
        elif not self.kappa >= 0:
            raise ScaleOutOfRange(f"perturbation magnitude must be >= 0, got {self.kappa!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "kappa": self.kappa,
            "cross_x_mode": self.cross_x_mode,
            "y1_marginal_only": self.y1_marginal_only,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftSpec":
        return cls(
            kind=d.get("kind", "symmetric_dirichlet"),
            kappa=float(d["kappa"]),
            cross_x_mode=d.get("cross_x_mode", "independent"),
            y1_marginal_only=bool(d.get("y1_marginal_only", False)),
        )

    @property
    def preserves_y2_conditional(self) -> bool:
        return self.kind == "asymmetric_marginal" or (
            self.kind == "paired_perturbation" and self.y1_marginal_only
        )


def _check_kappa(kappa: float) -> None:
    if not 0 < kappa < 1:
        raise KappaOutOfRange(f"kappa must lie in (0, 1), got {kappa!r}")


def _check_scale(scale: float) -> None:
    if not 0 <= scale < 1:
        raise ScaleOutOfRange(f"scale must lie in [0, 1), got {scale!r}")


# ---------------------------------------------------------------------------
# simplex samplers on (n, nx, k) batches
# ---------------------------------------------------------------------------

def _dirichlet_rows(p: np.ndarray, alpha: float, rng: np.random.Generator, size: int,
                    cross_x_mode: str = "independent") -> np.ndarray:
    """``size`` draws of Dirichlet(alpha * p[x]) for every row x; shape (size, nx, k)."""
    nx, k = p.shape
    if not alpha < MAX_CONCENTRATION:
        # kappa so small that the shift's standard deviation is far below double
        # resolution; the Gamma sums would overflow, so return the limit exactly
        return np.broadcast_to(p, (size, nx, k)).copy()
    out = np.empty((size, nx, k))
    if cross_x_mode == "independent":
        for x in range(nx):
            out[:, x, :] = rng.dirichlet(alpha * p[x], size=size)
        return out
    # comonotone gammas: one uniform per (draw, cell) shared by every covariate row
    u = rng.random((size, k))
    for x in range(nx):
        g = gammaincinv(alpha * p[x][None, :], u)
        s = g.sum(axis=1, keepdims=True)
        if np.any(s == 0):
            raise GeneratorError("shared-seed gamma draws underflowed; kappa too close to 1")
        out[:, x, :] = g / s
    return out


def _paired_rows(p: np.ndarray, magnitude: float, rng: np.random.Generator, size: int,
                 signs=None) -> np.ndarray:
    """Centered +/- perturbations of each row of p; returns the deltas (size, nx, k)."""
    nx, k = p.shape
    z = rng.standard_normal((size, nx, k))
    d = z - z.mean(axis=2, keepdims=True)
    peak = np.abs(d).max(axis=2, keepdims=True)
    d = np.divide(d, peak, out=np.zeros_like(d), where=peak > 0)
    room = np.minimum(p, 1.0 - p)[None, :, :]
    absd = np.abs(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        limit = np.where(absd > 0, room / absd, np.inf)
    eps = np.minimum(magnitude, limit.min(axis=2) * (1.0 - 1e-12))
    eps = np.where(np.isfinite(eps), eps, 0.0)
    if signs is None:
        sgn = np.where(rng.random((size, nx)) < 0.5, -1.0, 1.0)
    else:
        sgn = np.broadcast_to(np.asarray(signs, dtype=np.float64), (size, nx))
    return (sgn * eps)[:, :, None] * d


def _zero_cell(table: np.ndarray, alphabet=None):
    zero = np.argwhere(table <= 0)
    if not len(zero):
        return None
    x, a, b = (int(v) for v in zero[0])
    if alphabet is not None:
        return ZeroCellInBase(alphabet.x_labels[x], alphabet.y1_levels[a], alphabet.y2_levels[b])
    return ZeroCellInBase(x, a, b)


def _zero_marginal(marg: np.ndarray, alphabet=None):
    zero = np.argwhere(marg <= 0)
    if not len(zero):
        return None
    x, a = (int(v) for v in zero[0])
    if alphabet is not None:
        return ZeroMarginalCell(alphabet.x_labels[x], alphabet.y1_levels[a])
    return ZeroMarginalCell(x, a)


def _y2_conditional(table: np.ndarray) -> np.ndarray:
    marg = table.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(marg > 0, table / np.where(marg > 0, marg, 1.0), 0.0)


# ---------------------------------------------------------------------------
# array-level generators: table (nx, n1, n2) -> shifted tables (size, nx, n1, n2)
# ---------------------------------------------------------------------------

def symmetric_array(table, kappa, rng, size=1, cross_x_mode="independent", alphabet=None) -> np.ndarray:
    _check_kappa(kappa)
    err = _zero_cell(table, alphabet)
    if err is not None:
        raise err
    nx, n1, n2 = table.shape
    alpha = (1.0 - kappa) / kappa
    flat = _dirichlet_rows(table.reshape(nx, n1 * n2), alpha, rng, size, cross_x_mode)
    return flat.reshape(size, nx, n1, n2)


def asymmetric_array(table, scale, rng, size=1, method="dirichlet", cross_x_mode="independent",
                     alphabet=None) -> np.ndarray:
    _check_scale(scale)
    marg = table.sum(axis=-1)
    err = _zero_marginal(marg, alphabet)
    if err is not None:
        raise err
    if method not in ("dirichlet", "paired"):
        raise ValueError(f"unknown asymmetric method {method!r}")
    if scale == 0:
        new_marg = np.broadcast_to(marg, (size,) + marg.shape).copy()
    elif method == "dirichlet":
        new_marg = _dirichlet_rows(marg, (1.0 - scale) / scale, rng, size, cross_x_mode)
    else:
        new_marg = marg[None] + _paired_rows(marg, scale, rng, size)
    return new_marg[:, :, :, None] * _y2_conditional(table)[None]


def paired_array(table, magnitude, rng, size=1, signs=None, y1_marginal_only=False) -> np.ndarray:
    if not magnitude >= 0:
        raise ScaleOutOfRange(f"perturbation magnitude must be >= 0, got {magnitude!r}")
    nx, n1, n2 = table.shape
    if y1_marginal_only:
        marg = table.sum(axis=-1)
        new_marg = marg[None] + _paired_rows(marg, magnitude, rng, size, signs)
        return new_marg[:, :, :, None] * _y2_conditional(table)[None]
    flat = table.reshape(nx, n1 * n2)
    delta = _paired_rows(flat, magnitude, rng, size, signs)
    return (flat[None] + delta).reshape(size, nx, n1, n2)


def shift_array(spec: ShiftSpec, table: np.ndarray, rng, size=1, alphabet=None) -> np.ndarray:
    """Dispatch on ``spec.kind``; returns ``size`` shifted copies of ``table``."""
    if spec.kind == "symmetric_dirichlet":
        return symmetric_array(table, spec.kappa, rng, size, spec.cross_x_mode, alphabet)
    if spec.kind == "asymmetric_marginal":
        return asymmetric_array(table, spec.kappa, rng, size, "dirichlet", spec.cross_x_mode, alphabet)
    return paired_array(table, spec.kappa, rng, size, y1_marginal_only=spec.y1_marginal_only)


def shifted_tables(spec: ShiftSpec, joint: ConditionalJoint, rng, size=1) -> np.ndarray:
    return shift_array(spec, joint.table, rng, size, joint.alphabet)


def _finish(joint: ConditionalJoint, table: np.ndarray) -> tuple[ShiftDraw, ConditionalJoint]:
    shifted = new_conditional_joint(joint.alphabet, joint.px, table)
    return ShiftDraw(shifted.table - joint.table), shifted


# ---------------------------------------------------------------------------
# single-draw public API
# ---------------------------------------------------------------------------

def sample_symmetric_shift(joint: ConditionalJoint, kappa: float, rng: np.random.Generator,
                           cross_x_mode: str = "independent") -> tuple[ShiftDraw, ConditionalJoint]:
    """Resample every row as Dirichlet(alpha * p) with alpha = (1 - kappa) / kappa.

    The new row has mean p and Var(new(A)) = kappa * p(A) (1 - p(A)) for every
    event A, so the shift is centered with variance scaling linearly in kappa.
    """
    return _finish(joint, symmetric_array(joint.table, kappa, rng, 1, cross_x_mode, joint.alphabet)[0])


def sample_asymmetric_shift(joint: ConditionalJoint, scale: float, rng: np.random.Generator,
                            method: str = "dirichlet") -> tuple[ShiftDraw, ConditionalJoint]:
    """Shift only P(y1 | x), keeping P(y2 | y1, x) exactly as in ``joint``."""
    return _finish(joint, asymmetric_array(joint.table, scale, rng, 1, method, alphabet=joint.alphabet)[0])


def sample_paired_perturbation(joint: ConditionalJoint, magnitude: float, rng: np.random.Generator,
                               signs=None, y1_marginal_only: bool = False) -> tuple[ShiftDraw, ConditionalJoint]:
    """Move each row along a random zero-sum direction by +eps or -eps.

    eps is the largest step up to ``magnitude`` for which both p + eps*d and
    p - eps*d stay in [0, 1], so the sign flip keeps the shift exactly
    centered. ``signs`` (+1/-1 per covariate) forces the signs.
    """
    return _finish(joint, paired_array(joint.table, magnitude, rng, 1, signs, y1_marginal_only)[0])


def draw_shift(spec: ShiftSpec, joint: ConditionalJoint, rng) -> tuple[ShiftDraw, ConditionalJoint]:
    return _finish(joint, shifted_tables(spec, joint, rng, 1)[0])


def y2_conditional_preserved(before: ConditionalJoint, after: ConditionalJoint, tol=IDENTITY_TOL) -> bool:
    """True when P(y2 | y1, x) agrees cellwise wherever both define it."""
    a, b = before.y2_conditional(), after.y2_conditional()
    both = ~(np.isnan(a) | np.isnan(b))
    return bool(np.all(np.abs(a[both] - b[both]) <= tol))


# ---------------------------------------------------------------------------
# covariate permutation
# ---------------------------------------------------------------------------

def permute_codes(x: np.ndarray, fraction: float, rounds: int, rng: np.random.Generator) -> np.ndarray:
    """Shuffle covariate codes among a random ``floor(fraction * n)`` subset, ``rounds`` times."""
    if not 0 <= fraction <= 1:
        raise ConfigError("fraction must lie in [0, 1]")
    if rounds < 0:
        raise ConfigError("rounds must be >= 0")
    n = len(x)
    if n == 0:
        raise EmptySampleSet("cannot permute an empty sample")
    out = np.array(x, copy=True)
    m = int(np.floor(fraction * n))
    for _ in range(rounds):
        if m < 2:
            continue
        idx = rng.choice(n, size=m, replace=False)
        out[idx] = out[idx[rng.permutation(m)]]
    return out


def permute_covariates(samples, fraction: float, rounds: int, rng: np.random.Generator):
    """Return a copy of ``samples`` with covariates shuffled among random row subsets.

    Outcomes stay attached to their rows; only the x tokens move.
    """
    if len(samples) == 0:
        raise EmptySampleSet("cannot permute an empty sample")
    return samples.with_x(permute_codes(samples.x, fraction, rounds, rng))


# ---------------------------------------------------------------------------
# generator validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentCheck:
    x: object
    statistic: str  # "mean", "var" or "cov"
    event: str
    empirical: float
    expected: float
    se: float
    passed: bool


@dataclass
class ValidationReport:
    spec: ShiftSpec
    n_draws: int
    checks: list[MomentCheck] = field(default_factory=list)

    def passed(self, statistic: str | None = None) -> bool:
        return all(c.passed for c in self.checks if statistic is None or c.statistic == statistic)

    @property
    def centering_pass(self) -> bool:
        return self.passed("mean")

    @property
    def variance_pass(self) -> bool:
        return self.passed("var")

    @property
    def covariance_pass(self) -> bool:
        return self.passed("cov")

    @property
    def all_pass(self) -> bool:
        return self.passed()


def _moment_rows(x_label, names, s, p, kappa, n_sigma):
    """Mean, variance and covariance checks for one covariate slice.

    ``s`` holds shift draws (n, k) over the cells; ``p`` the base probabilities.
    """
    n = s.shape[0]
    rows = []
    centred = s - s.mean(axis=0)
    root_n = np.sqrt(n)

    def check(stat, event, values, expected, sample):
        est = float(values)
        se = float(np.std(sample, ddof=1) / root_n) if n > 1 else float("inf")
        rows.append(MomentCheck(x_label, stat, event, est, float(expected), se,
                                abs(est - expected) <= n_sigma * se + 1e-15))

    k = s.shape[1]
    events = [((a,), names[a]) for a in range(k)]
    events += [((a, b), f"{names[a]}|{names[b]}") for a in range(k) for b in range(a + 1, k)]
    for members, label in events:
        sa = s[:, list(members)].sum(axis=1)
        pa = p[list(members)].sum()
        check("mean", label, sa.mean(), 0.0, sa)
        ca = sa - sa.mean()
        check("var", label, np.mean(ca**2), kappa * pa * (1 - pa), ca**2)
    for a in range(k):
        for b in range(a + 1, k):
            prod = centred[:, a] * centred[:, b]
            check("cov", f"{names[a]},{names[b]}", prod.mean(), -kappa * p[a] * p[b], prod)
    return rows


def validate_generator(spec: ShiftSpec, joint: ConditionalJoint, n_draws: int,
                       rng: np.random.Generator, n_sigma: float = 4.0) -> ValidationReport:
    """Compare empirical shift moments with the centered, kappa-scaled variance law.

    Checks, per covariate, every singleton and every two-cell union event:
    mean zero, Var(S(A)) = kappa p(A)(1 - p(A)), and for every cell pair
    Cov(S(a), S(a')) = -kappa p(a) p(a'). A check passes when it is within
    ``n_sigma`` Monte Carlo standard errors.
    """
    if n_draws < 1000:
        raise ConfigError("validate_generator needs at least 1000 draws")
    nx, n1, n2 = joint.shape
    tables = shifted_tables(spec, joint, rng, n_draws)
    deltas = (tables - joint.table[None]).reshape(n_draws, nx, n1 * n2)
    al = joint.alphabet
    names = [f"({a},{b})" for a in al.y1_levels for b in al.y2_levels]
    report = ValidationReport(spec, n_draws)
    flat_p = joint.table.reshape(nx, n1 * n2)
    for x in range(nx):
        report.checks.extend(
            _moment_rows(al.x_labels[x], names, deltas[:, x, :], flat_p[x], spec.kappa, n_sigma)
        )
    return report
