"""Finite-alphabet joint distributions over (X, Y1, Y2) and their conditional means."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import AlphabetError, EmptySupport, NegativeProbability, RowSumViolation

INPUT_TOL = 1e-9
IDENTITY_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Alphabet:
    """Ordered covariate tokens and outcome levels with their real values.

    If ``y1_values``/``y2_values`` are omitted the levels themselves are
    converted with ``float``.
    """

    x_labels: tuple
    y1_levels: tuple
    y2_levels: tuple
    y1_values: np.ndarray = None
    y2_values: np.ndarray = None

    def __post_init__(self):
        for name in ("x_labels", "y1_levels", "y2_levels"):
            labels = tuple(getattr(self, name))
            if len(labels) == 0:
                raise EmptySupport(f"{name} is empty")
            if len(set(labels)) != len(labels):
                raise AlphabetError(f"{name} contains duplicates")
            object.__setattr__(self, name, labels)
        for lv, vv in (("y1_levels", "y1_values"), ("y2_levels", "y2_values")):
            levels = getattr(self, lv)
            values = getattr(self, vv)
            if values is None:
                try:
                    values = [float(v) for v in levels]
                except (TypeError, ValueError):
                    raise AlphabetError(f"{vv} missing and {lv} are not numeric") from None
            values = _readonly(values)
            if values.shape != (len(levels),):
                raise AlphabetError(f"{vv} must have one value per level")
            if not np.all(np.isfinite(values)):
                raise AlphabetError(f"{vv} must be finite")
            object.__setattr__(self, vv, values)

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.x_labels), len(self.y1_levels), len(self.y2_levels)

    def __eq__(self, other):
        if not isinstance(other, Alphabet):
            return NotImplemented
        return (
            self.x_labels == other.x_labels
            and self.y1_levels == other.y1_levels
            and self.y2_levels == other.y2_levels
            and np.array_equal(self.y1_values, other.y1_values)
            and np.array_equal(self.y2_values, other.y2_values)
        )

    def __hash__(self):
        return hash((self.x_labels, self.y1_levels, self.y2_levels))

    def x_index(self, x) -> int:
        try:
            return self.x_labels.index(x)
        except ValueError:
            raise KeyError(x) from None

    def with_values(self, y1_values=None, y2_values=None) -> "Alphabet":
        return Alphabet(
            self.x_labels,
            self.y1_levels,
            self.y2_levels,
            self.y1_values if y1_values is None else y1_values,
            self.y2_values if y2_values is None else y2_values,
        )


@dataclass(frozen=True, eq=False)
class ConditionalJoint:
    """P(x) together with P(y1, y2 | x) as an array of shape (nx, n1, n2).

    Build through :func:`new_conditional_joint`, which validates and (within
    ``INPUT_TOL``) renormalises. Instances are immutable.
    """

    alphabet: Alphabet
    px: np.ndarray
    table: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.table.shape

    @property
    def y1_values(self) -> np.ndarray:
        return self.alphabet.y1_values

    @property
    def y2_values(self) -> np.ndarray:
        return self.alphabet.y2_values

    def y1_marginal(self) -> np.ndarray:
        """P(y1 | x), shape (nx, n1)."""
        return self.table.sum(axis=2)

    def y2_conditional(self) -> np.ndarray:
        """P(y2 | y1, x), shape (nx, n1, n2); NaN rows where P(y1 | x) = 0."""
        marg = self.y1_marginal()
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = self.table / marg[:, :, None]
        cond[marg == 0] = np.nan
        return cond

    def replace_table(self, table: np.ndarray) -> "ConditionalJoint":
        return new_conditional_joint(self.alphabet, self.px, table)

    def replace_px(self, px) -> "ConditionalJoint":
        return new_conditional_joint(self.alphabet, px, self.table)


def _as_array(alphabet: Alphabet, px, table) -> tuple[np.ndarray, np.ndarray]:
    nx, n1, n2 = alphabet.shape
    if isinstance(px, Mapping):
        px = [px[x] for x in alphabet.x_labels]
    if isinstance(table, Mapping):
        table = [table[x] for x in alphabet.x_labels]
    px = np.asarray(px, dtype=np.float64)
    table = np.asarray(table, dtype=np.float64)
    if px.shape != (nx,):
        raise AlphabetError(f"px has shape {px.shape}, expected {(nx,)}")
    if table.shape != (nx, n1, n2):
        raise AlphabetError(f"table has shape {table.shape}, expected {(nx, n1, n2)}")
    return px.copy(), table.copy()


def new_conditional_joint(alphabet: Alphabet, px, table) -> ConditionalJoint:
    """Validate and build a joint.

    ``px`` may be a sequence or a mapping x -> probability; ``table`` a nested
    sequence of shape (nx, n1, n2) or a mapping x -> (n1, n2) matrix. Row sums
    off by less than 1e-9 are renormalised, anything larger is rejected.
    """
    px, table = _as_array(alphabet, px, table)
    if not (np.all(np.isfinite(px)) and np.all(np.isfinite(table))):
        raise NegativeProbability("probabilities must be finite")
    if (px < 0).any():
        raise NegativeProbability(f"negative P(x): {px.min()!r}")
    if (table < 0).any():
        raise NegativeProbability(f"negative cell probability: {table.min()!r}")
    total = px.sum()
    if abs(total - 1.0) >= INPUT_TOL:
        raise RowSumViolation("px", float(total))
    px = px / total
    sums = table.sum(axis=(1, 2))
    for i, s in enumerate(sums):
        if abs(s - 1.0) >= INPUT_TOL:
            raise RowSumViolation(alphabet.x_labels[i], float(s))
    table = table / sums[:, None, None]
    if (table > 1 + IDENTITY_TOL).any():
        raise NegativeProbability("cell probability exceeds one")
    table = np.minimum(table, 1.0)
    return ConditionalJoint(alphabet, _readonly(px), _readonly(table))


@dataclass(frozen=True, eq=False)
class ProxyScaling:
    """Affine map y1 -> slope * y1 + intercept putting the proxy on the target scale."""

    slope: float = 1.0
    intercept: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError("proxy scaling slope must be strictly positive")

    def __call__(self, y):
        return self.slope * np.asarray(y, dtype=np.float64) + self.intercept


IDENTITY_SCALING = ProxyScaling(1.0, 0.0)


@dataclass(frozen=True, eq=False)
class PredictorTable:
    """A prediction per covariate token.

    ``flagged`` lists tokens where an absent first-stage cell was replaced by
    the covariate-level mean.
    """

    x_labels: tuple
    values: np.ndarray
    flagged: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "x_labels", tuple(self.x_labels))
        values = _readonly(self.values)
        if values.shape != (len(self.x_labels),):
            raise AlphabetError("one prediction per covariate token is required")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "flagged", frozenset(self.flagged))

    def __getitem__(self, x) -> float:
        return float(self.values[self.x_labels.index(x)])

    def __len__(self) -> int:
        return len(self.x_labels)

    def as_dict(self) -> dict:
        return dict(zip(self.x_labels, self.values.tolist()))

    def max_abs_diff(self, other: "PredictorTable") -> float:
        if self.x_labels != other.x_labels:
            raise AlphabetError("predictor tables are over different covariates")
        return float(np.max(np.abs(self.values - other.values)))


@dataclass(frozen=True)
class NoiseTerms:
    noise_full: float
    noise_x: float
    proxy_bias: float
    proxy_resid: float


def _x_weights(joint: ConditionalJoint, weights) -> np.ndarray:
    if weights is None:
        return joint.px
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != joint.px.shape:
        raise AlphabetError("weights need one entry per covariate token")
    return w / w.sum()


def _mean_y2(joint: ConditionalJoint) -> np.ndarray:
    return joint.table.sum(axis=1) @ joint.y2_values


def _mean_y1(joint: ConditionalJoint) -> np.ndarray:
    # same reduction as the hybrid predictor's outer average (see estimators)
    return (joint.table.sum(axis=2) * joint.y1_values).sum(axis=-1)


def cond_mean_y2_given_x(joint: ConditionalJoint) -> PredictorTable:
    return PredictorTable(joint.alphabet.x_labels, _mean_y2(joint))


def cond_mean_y1_given_x(joint: ConditionalJoint) -> PredictorTable:
    return PredictorTable(joint.alphabet.x_labels, _mean_y1(joint))


def cond_mean_y2_given_y1_x(joint: ConditionalJoint) -> np.ndarray:
    """E[Y2 | Y1 = y1, X = x] as an (nx, n1) array.

    Cells with P(y1 | x) = 0 are absent and hold NaN rather than 0.
    """
    marg = joint.y1_marginal()
    num = joint.table @ joint.y2_values
    out = np.full(marg.shape, np.nan)
    present = marg > 0
    out[present] = num[present] / marg[present]
    return out


def proxy_scaling_objective(joint: ConditionalJoint, slope: float, intercept: float, weights=None) -> float:
    w = _x_weights(joint, weights)
    return float(w @ (slope * _mean_y1(joint) + intercept - _mean_y2(joint)) ** 2)


def fit_proxy_scaling(joint: ConditionalJoint, weights=None) -> ProxyScaling:
    """Weighted least squares of E[Y2|X] on E[Y1|X] across covariates.

    Falls back to slope 1 with a mean-matching intercept (``degenerate=True``)
    when E[Y1|X] is constant or the fitted slope is not positive.
    """
    w = _x_weights(joint, weights)
    m1, m2 = _mean_y1(joint), _mean_y2(joint)
    mean1, mean2 = w @ m1, w @ m2
    var1 = w @ (m1 - mean1) ** 2
    scale = max(1.0, float(w @ m1**2))
    if var1 > IDENTITY_TOL * scale:
        slope = (w @ ((m1 - mean1) * (m2 - mean2))) / var1
        if slope > 0:
            return ProxyScaling(float(slope), float(mean2 - slope * mean1))
    return ProxyScaling(1.0, float(mean2 - mean1), degenerate=True)


def noise_terms(joint: ConditionalJoint, scaling: ProxyScaling = IDENTITY_SCALING, weights=None) -> NoiseTerms:
    """Exact residual second moments entering the mean-squared-error decomposition."""
    w = _x_weights(joint, weights)
    t = joint.table
    y1 = scaling(joint.y1_values)
    y2 = joint.y2_values
    q = np.nan_to_num(cond_mean_y2_given_y1_x(joint))  # absent cells carry no mass
    m2 = _mean_y2(joint)
    full = np.einsum("xab,xab->x", t, (y2[None, None, :] - q[:, :, None]) ** 2)
    given_x = np.einsum("xab,xab->x", t, (y2[None, None, :] - m2[:, None, None]) ** 2)
    diff = y2[None, :] - y1[:, None]  # (n1, n2)
    diff_mean = np.einsum("xab,ab->x", t, diff)
    resid = np.einsum("xab,xab->x", t, (diff[None] - diff_mean[:, None, None]) ** 2)
    return NoiseTerms(
        noise_full=float(w @ full),
        noise_x=float(w @ given_x),
        proxy_bias=float(w @ diff_mean**2),
        proxy_resid=float(w @ resid),
    )


def conditional_variances(joint: ConditionalJoint, x_index: int) -> tuple[float, float, float]:
    """(Var(Y2|x), Var(E[Y2|Y1,X] | x), E[(Y2 - E[Y2|Y1,X])^2 | x]) at one covariate."""
    t = joint.table[x_index]
    y2 = joint.y2_values
    marg = t.sum(axis=1)
    q = np.nan_to_num(cond_mean_y2_given_y1_x(joint)[x_index])
    m2 = float(t.sum(axis=0) @ y2)
    total = float(np.sum(t * (y2[None, :] - m2) ** 2))
    explained = float(marg @ (q - m2) ** 2)
    resid = float(np.sum(t * (y2[None, :] - q[:, None]) ** 2))
    return total, explained, resid


def outer_joint(joint: ConditionalJoint) -> np.ndarray:
    """P(x, y1, y2) as an (nx, n1, n2) array."""
    return joint.px[:, None, None] * joint.table


def joint_from_y1_marginal(joint: ConditionalJoint, marginal: np.ndarray) -> np.ndarray:
    """Recombine a new P(y1|x) with the unchanged P(y2|y1,x) of ``joint``."""
    cond = np.nan_to_num(joint.y2_conditional())
    return np.asarray(marginal)[:, :, None] * cond


def relabel(joint: ConditionalJoint, x_order: Sequence[int] | None = None) -> ConditionalJoint:
    """Same distribution with covariate tokens reordered."""
    if x_order is None:
        return joint
    x_order = list(x_order)
    a = joint.alphabet
    alph = Alphabet(
        tuple(a.x_labels[i] for i in x_order), a.y1_levels, a.y2_levels, a.y1_values, a.y2_values
    )
    return new_conditional_joint(alph, joint.px[x_order], joint.table[x_order])


@dataclass(frozen=True, eq=False)
class ChainJoint:
    """P(x) and P(y_1, ..., y_t | x) for an outcome chain observed up to Y_t.

    ``table`` has shape (nx, L_1, ..., L_t); ``outcome_values[k]`` holds the real
    values of the levels of Y_{k+1}.
    """

    x_labels: tuple
    outcome_values: tuple
    px: np.ndarray
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_labels", tuple(self.x_labels))
        values = tuple(_readonly(v) for v in self.outcome_values)
        object.__setattr__(self, "outcome_values", values)
        px = np.asarray(self.px, dtype=np.float64)
        table = np.asarray(self.table, dtype=np.float64)
        expected = (len(self.x_labels),) + tuple(len(v) for v in values)
        if table.shape != expected:
            raise AlphabetError(f"table has shape {table.shape}, expected {expected}")
        if (table < 0).any() or (px < 0).any():
            raise NegativeProbability("negative probability in chain joint")
        sums = table.reshape(len(self.x_labels), -1).sum(axis=1)
        for i, s in enumerate(sums):
            if abs(s - 1.0) >= INPUT_TOL:
                raise RowSumViolation(self.x_labels[i], float(s))
        if abs(px.sum() - 1.0) >= INPUT_TOL:
            raise RowSumViolation("px", float(px.sum()))
        table = table / sums.reshape((-1,) + (1,) * len(values))
        object.__setattr__(self, "px", _readonly(px / px.sum()))
        object.__setattr__(self, "table", _readonly(table))

    @property
    def n_outcomes(self) -> int:
        return len(self.outcome_values)

    @classmethod
    def from_conditional(cls, joint: ConditionalJoint, n_outcomes: int = 2) -> "ChainJoint":
        """View a (Y1, Y2) joint as a chain; ``n_outcomes=1`` keeps Y1 only."""
        a = joint.alphabet
        if n_outcomes == 2:
            return cls(a.x_labels, (a.y1_values, a.y2_values), joint.px, joint.table)
        if n_outcomes == 1:
            return cls(a.x_labels, (a.y1_values,), joint.px, joint.table.sum(axis=2))
        raise ValueError("a (Y1, Y2) joint carries one or two outcomes")
