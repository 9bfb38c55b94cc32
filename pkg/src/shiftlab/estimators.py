"""Population predictors tau^A / tau^B / tau^C, the nested chain family, and sample plug-ins.

Two layers live here:

* object-level functions (``tau_A``, ``hat_tau_C``, ...) working on
  :class:`ConditionalJoint` / :class:`SampleSet` and returning
  :class:`PredictorTable`;
* array-level cores (``plugin_from_counts``, ``tau_arrays``) that accept a
  leading batch axis and are shared with the Monte Carlo harness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .dist_core import (
    IDENTITY_SCALING,
    IDENTITY_TOL,
    Alphabet,
    ChainJoint,
    ConditionalJoint,
    PredictorTable,
    ProxyScaling,
    cond_mean_y1_given_x,
    cond_mean_y2_given_x,
    cond_mean_y2_given_y1_x,
    fit_proxy_scaling,
    new_conditional_joint,
)
from .errors import AlphabetError, EmptySampleSet, MissingCovariateCell, SchemaViolation

PERIODS = (-2, -1, 0)


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------

def _token_order(tokens: Iterable) -> tuple:
    unique = list(dict.fromkeys(tokens))
    try:
        return tuple(sorted(unique))
    except TypeError:
        return tuple(unique)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Labelled rows (period, x, y1, y2); unobserved outcomes are NaN.

    Period -2 rows carry both outcomes, period -1 rows only the proxy, period 0
    rows neither. Any other pattern raises :class:`SchemaViolation` naming the
    offending row (1-based).
    """

    period: np.ndarray
    x: np.ndarray
    y1: np.ndarray
    y2: np.ndarray

    def __post_init__(self):
        period = np.asarray(self.period, dtype=np.int64)
        x = np.empty(len(self.x), dtype=object)
        x[:] = list(self.x)
        y1 = np.asarray(self.y1, dtype=np.float64)
        y2 = np.asarray(self.y2, dtype=np.float64)
        n = len(period)
        if not (len(x) == len(y1) == len(y2) == n):
            raise SchemaViolation(None, "columns have different lengths")
        has1, has2 = ~np.isnan(y1), ~np.isnan(y2)
        expected1 = period >= -2
        expected1 = np.where(period == 0, False, expected1)
        bad = ~np.isin(period, PERIODS) | (has1 != expected1) | (has2 != (period == -2))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise SchemaViolation(i + 1, _pattern_reason(int(period[i]), bool(has1[i]), bool(has2[i])))
        for name, arr in (("period", period), ("x", x), ("y1", y1), ("y2", y2)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.period)

    @classmethod
    def from_rows(cls, rows: Iterable[tuple]) -> "SampleSet":
        rows = list(rows)
        nan = float("nan")
        return cls(
            [r[0] for r in rows],
            [r[1] for r in rows],
            [nan if r[2] is None else r[2] for r in rows],
            [nan if r[3] is None else r[3] for r in rows],
        )

    @classmethod
    def from_codes(cls, alphabet: Alphabet, period: int, x, y1=None, y2=None) -> "SampleSet":
        """Rows of one period from integer codes into ``alphabet``."""
        x = np.asarray(x)
        n = len(x)
        labels = np.empty(len(alphabet.x_labels), dtype=object)
        labels[:] = list(alphabet.x_labels)
        v1 = np.full(n, np.nan) if y1 is None else alphabet.y1_values[np.asarray(y1)]
        v2 = np.full(n, np.nan) if y2 is None else alphabet.y2_values[np.asarray(y2)]
        return cls(np.full(n, period), labels[x], v1, v2)

    def rows(self):
        for p, x, a, b in zip(self.period, self.x, self.y1, self.y2):
            yield int(p), x, None if np.isnan(a) else float(a), None if np.isnan(b) else float(b)

    def subset(self, mask) -> "SampleSet":
        return SampleSet(self.period[mask], self.x[mask], self.y1[mask], self.y2[mask])

    def of_period(self, period: int) -> "SampleSet":
        return self.subset(self.period == period)

    def with_x(self, x) -> "SampleSet":
        return SampleSet(self.period, x, self.y1, self.y2)

    def x_labels(self) -> tuple:
        return _token_order(self.x)

    def concat(self, other: "SampleSet") -> "SampleSet":
        return SampleSet(
            np.concatenate([self.period, other.period]),
            np.concatenate([self.x, other.x]),
            np.concatenate([self.y1, other.y1]),
            np.concatenate([self.y2, other.y2]),
        )


def _pattern_reason(period: int, has1: bool, has2: bool) -> str:
    if period not in PERIODS:
        return f"period {period} is not one of -2, -1, 0"
    if period == -2:
        return "period -2 rows need both y1 and y2"
    if period == -1:
        return "y2 present in period -1" if has2 else "period -1 rows need y1"
    return "period 0 rows carry covariates only"


def _codes(tokens: np.ndarray, labels: Sequence) -> np.ndarray:
    index = {t: i for i, t in enumerate(labels)}
    try:
        return np.fromiter((index[t] for t in tokens), dtype=np.int64, count=len(tokens))
    except KeyError as exc:
        raise AlphabetError(f"covariate {exc.args[0]!r} not in the prediction domain") from None


def _counts_by_x(samples: SampleSet, labels: Sequence, period: int) -> np.ndarray:
    rows = samples.of_period(period)
    counts = _kernels.bincount_flat(_codes(rows.x, labels), len(labels))
    missing = np.flatnonzero(counts == 0)
    if len(missing):
        raise MissingCovariateCell(labels[missing[0]], period)
    return counts


# ---------------------------------------------------------------------------
# population predictors
# ---------------------------------------------------------------------------

def tau_A(joint_m2: ConditionalJoint) -> PredictorTable:
    """E_{-2}[Y2 | X = x]."""
    return cond_mean_y2_given_x(joint_m2)


def tau_B(joint_m1: ConditionalJoint, scaling: ProxyScaling = IDENTITY_SCALING) -> PredictorTable:
    """slope * E_{-1}[Y1 | X = x] + intercept."""
    m1 = cond_mean_y1_given_x(joint_m1).values
    return PredictorTable(joint_m1.alphabet.x_labels, scaling(m1))


def _tau_c_core(table_m2, marg_m1, y2_values):
    """Hybrid predictor on arrays with an optional leading batch axis.

    Returns ``(values, flagged)`` where ``flagged[..., x]`` marks covariates at
    which an absent first-stage cell received period -1 mass and was replaced
    by E_{-2}[Y2 | x].
    """
    marg_m2 = table_m2.sum(axis=-1)
    tau_a = (table_m2.sum(axis=-2) @ y2_values)
    absent = marg_m2 <= 0
    # normalise to P(y2 | y1, x) before weighting by the values, so that a
    # one-to-one proxy gives Q(x, y1) equal to the matching y2 value exactly
    cond = table_m2 / np.where(absent, 1.0, marg_m2)[..., None]
    q = np.where(absent, tau_a[..., None], cond @ y2_values)
    flagged = np.any(absent & (marg_m1 > 0), axis=-1)
    return (marg_m1 * q).sum(axis=-1), flagged


def tau_C(joint_m2: ConditionalJoint, joint_m1: ConditionalJoint) -> PredictorTable:
    """E_{-1}[ E_{-2}[Y2 | Y1, X] | X = x ], with flagged fallback on absent cells."""
    if joint_m1.alphabet != joint_m2.alphabet:
        raise AlphabetError("tau_C needs both joints on the same alphabet")
    values, flagged = _tau_c_core(joint_m2.table, joint_m1.y1_marginal(), joint_m2.y2_values)
    labels = joint_m2.alphabet.x_labels
    return PredictorTable(labels, values, frozenset(labels[i] for i in np.flatnonzero(flagged)))


def tau_arrays(table_m2, table_m1, y1_values, y2_values, slope=1.0, intercept=0.0) -> dict:
    """tau^A, tau^B and tau^C for (batches of) tables of shape (..., nx, n1, n2)."""
    marg_m1 = table_m1.sum(axis=-1)
    c, flagged = _tau_c_core(table_m2, marg_m1, y2_values)
    return {
        "A": table_m2.sum(axis=-2) @ y2_values,
        "B": slope * (marg_m1 * y1_values).sum(axis=-1) + intercept,
        "C": c,
        "flagged": flagged,
    }


def _as_chain(joint, period_index: int) -> ChainJoint:
    if isinstance(joint, ChainJoint):
        return joint
    if isinstance(joint, ConditionalJoint):
        return ChainJoint.from_conditional(joint, n_outcomes=min(period_index, 2))
    raise TypeError(f"expected a ChainJoint or ConditionalJoint, got {type(joint).__name__}")


def tau_nested(joints: Sequence, t1: int, t2: int) -> PredictorTable:
    """Nested multi-period predictor tau^{t1-t2}.

    ``joints`` is ordered from period -T to period -1; the period -t entry
    carries outcomes Y_1..Y_t (extra trailing outcomes are marginalised out).
    The innermost stage is E_{-t2}[Y_{t2} | Y_{t1}, ..., Y_{t2-1}, x]; each
    following stage averages the previous one under period -k given
    Y_{t1}, ..., Y_{k-1}, x, ending with period -t1 given x alone.

    A conditional that is undefined (zero mass) at some stage is replaced by
    the same period's mean with one fewer conditioning outcome, recursively;
    covariates where such a cell receives mass at the next stage are flagged.
    """
    T = len(joints)
    if not 1 <= t1 < t2 <= T:
        raise ValueError(f"need 1 <= t1 < t2 <= T, got t1={t1}, t2={t2}, T={T}")
    chains = {k: _as_chain(joints[T - k], k) for k in range(t1, t2 + 1)}
    labels = chains[t2].x_labels
    for k, chain in chains.items():
        if chain.x_labels != labels:
            raise AlphabetError("all periods must share the covariate alphabet")
        if chain.n_outcomes < k:
            raise AlphabetError(f"period -{k} joint carries {chain.n_outcomes} outcomes, needs {k}")

    def window(k):
        """P_{-k}(y_t1, ..., y_k | x) with other outcomes summed out."""
        chain = chains[k]
        drop = tuple(range(1, t1)) + tuple(range(k + 1, chain.n_outcomes + 1))
        return chain.table.sum(axis=drop) if drop else chain.table

    nx = len(labels)
    flagged = np.zeros(nx, dtype=bool)
    y_t2 = chains[t2].outcome_values[t2 - 1]
    f = np.broadcast_to(y_t2, window(t2).shape).astype(np.float64)
    for k in range(t2, t1 - 1, -1):
        levels = _stage_means(window(k), f)
        if k > t1:
            hole = np.isnan(levels[0]) & (window(k - 1) > 0)
            flagged |= hole.reshape(nx, -1).any(axis=1)
            f = _fill_from_coarser(levels)
        else:
            f = levels[0]
    return PredictorTable(labels, f.reshape(nx), frozenset(labels[i] for i in np.flatnonzero(flagged)))


def _stage_means(p: np.ndarray, f: np.ndarray) -> list:
    """Conditional means of f under p, summing out trailing axes one at a time.

    ``levels[0]`` conditions on every axis but the last; each later entry drops
    one more trailing outcome, ending with the x-only mean. NaN marks cells
    with zero conditioning mass.
    """
    levels = []
    num, den = p * f, p
    while num.ndim > 1:
        num, den = num.sum(axis=-1), den.sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            levels.append(np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan))
    return levels


def _fill_from_coarser(levels: list) -> np.ndarray:
    out = levels[0].copy()
    for coarse in levels[1:]:
        hole = np.isnan(out)
        if not hole.any():
            break
        shape = coarse.shape + (1,) * (out.ndim - coarse.ndim)
        out = np.where(hole, np.broadcast_to(coarse.reshape(shape), out.shape), out)
    return out


# ---------------------------------------------------------------------------
# finite-sample plug-ins
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FittedFirstStage:
    """Cell means Q(x, y1) of Y2 from period -2 rows; NaN marks empty cells."""

    x_labels: tuple
    y1_levels: np.ndarray
    q: np.ndarray
    fallback: np.ndarray
    counts: np.ndarray

    def value(self, x, y1: float) -> float | None:
        i = self.x_labels.index(x)
        j = int(np.searchsorted(self.y1_levels, y1))
        if j >= len(self.y1_levels) or self.y1_levels[j] != y1 or np.isnan(self.q[i, j]):
            return None
        return float(self.q[i, j])


def fit_first_stage(samples: SampleSet, x_labels: Sequence | None = None,
                    y1_levels: Sequence[float] | None = None) -> FittedFirstStage:
    """Sample means of y2 per (x, y1) cell and per x over period -2 rows."""
    rows = samples.of_period(-2)
    labels = tuple(x_labels) if x_labels is not None else rows.x_labels()
    if len(rows) == 0 and not labels:
        raise EmptySampleSet("no period -2 rows")
    levels = np.unique(rows.y1) if y1_levels is None else np.asarray(sorted(y1_levels), dtype=float)
    n_x = _counts_by_x(samples, labels, -2)
    xc = _codes(rows.x, labels)
    yc = np.searchsorted(levels, rows.y1)
    flat = xc * len(levels) + yc
    size = len(labels) * len(levels)
    cnt = _kernels.bincount_flat(flat, size).reshape(len(labels), len(levels))
    tot = _kernels.bincount_weighted(flat, rows.y2, size).reshape(len(labels), len(levels))
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)
    fallback = tot.sum(axis=1) / n_x
    return FittedFirstStage(labels, levels, q, fallback, cnt)


def _domain(samples: SampleSet, x_labels) -> tuple:
    return tuple(x_labels) if x_labels is not None else samples.x_labels()


def _mean_by_x(samples: SampleSet, labels, period: int, column: str) -> np.ndarray:
    rows = samples.of_period(period)
    n = _counts_by_x(samples, labels, period)
    tot = _kernels.bincount_weighted(_codes(rows.x, labels), getattr(rows, column), len(labels))
    return tot / n


def hat_tau_A(samples: SampleSet, x_labels=None) -> PredictorTable:
    """Sample mean of y2 over period -2 rows at each covariate."""
    labels = _domain(samples, x_labels)
    return PredictorTable(labels, _mean_by_x(samples, labels, -2, "y2"))


def hat_tau_B(samples: SampleSet, scaling: ProxyScaling = IDENTITY_SCALING, x_labels=None) -> PredictorTable:
    """slope * (sample mean of y1 over period -1 rows) + intercept."""
    labels = _domain(samples, x_labels)
    return PredictorTable(labels, scaling(_mean_by_x(samples, labels, -1, "y1")))


def hat_tau_C(samples: SampleSet, x_labels=None) -> PredictorTable:
    """Average of the fitted first stage Q(x, y1) over period -1 rows.

    Proxy values with no period -2 support at that covariate fall back to the
    covariate mean of y2; those covariates are flagged.
    """
    labels = _domain(samples, x_labels)
    recent = samples.of_period(-1)
    levels = np.unique(np.concatenate([samples.of_period(-2).y1, recent.y1]))
    stage = fit_first_stage(samples, labels, levels)
    n_x = _counts_by_x(samples, labels, -1)
    xc = _codes(recent.x, labels)
    yc = np.searchsorted(levels, recent.y1)
    q = stage.q[xc, yc]
    hole = np.isnan(q)
    q = np.where(hole, stage.fallback[xc], q)
    values = _kernels.bincount_weighted(xc, q, len(labels)) / n_x
    flagged = frozenset(labels[i] for i in np.unique(xc[hole]))
    return PredictorTable(labels, values, flagged)


def empirical_joint(samples: SampleSet, x_labels=None) -> ConditionalJoint:
    """Sample-proportion joint of period -2 rows; px from the covariate frequencies."""
    rows = samples.of_period(-2)
    labels = _domain(rows, x_labels)
    n_x = _counts_by_x(samples, labels, -2)
    l1, l2 = np.unique(rows.y1), np.unique(rows.y2)
    flat = (_codes(rows.x, labels) * len(l1) + np.searchsorted(l1, rows.y1)) * len(l2) + np.searchsorted(l2, rows.y2)
    cnt = _kernels.bincount_flat(flat, len(labels) * len(l1) * len(l2)).reshape(len(labels), len(l1), len(l2))
    alphabet = Alphabet(labels, tuple(range(len(l1))), tuple(range(len(l2))), l1, l2)
    return new_conditional_joint(alphabet, n_x / n_x.sum(), cnt / n_x[:, None, None])


def fit_sample_scaling(samples: SampleSet, x_labels=None) -> ProxyScaling:
    """Proxy rescaling fitted on period -2 sample means, weighted by covariate frequency."""
    return fit_proxy_scaling(empirical_joint(samples, x_labels))


# ---------------------------------------------------------------------------
# batched count-based core
# ---------------------------------------------------------------------------

def fit_scaling_arrays(m1, m2, w):
    """Vectorised proxy-scaling fit over a leading batch axis; same rule as fit_proxy_scaling."""
    w = w / w.sum(axis=-1, keepdims=True)
    mean1 = (w * m1).sum(axis=-1)
    mean2 = (w * m2).sum(axis=-1)
    d1 = m1 - mean1[..., None]
    var1 = (w * d1**2).sum(axis=-1)
    cov = (w * d1 * (m2 - mean2[..., None])).sum(axis=-1)
    scale = np.maximum(1.0, (w * m1**2).sum(axis=-1))
    ok = var1 > IDENTITY_TOL * scale
    slope = np.where(ok, cov / np.where(ok, var1, 1.0), 1.0)
    ok &= slope > 0
    slope = np.where(ok, slope, 1.0)
    intercept = np.where(ok, mean2 - slope * mean1, mean2 - mean1)
    return slope, intercept, ~ok


def plugin_from_counts(c2, c1, y1_values, y2_values, scaling="fit", x_labels=None) -> dict:
    """Plug-in predictors from cell counts.

    ``c2`` has shape (..., nx, n1, n2) (period -2 rows), ``c1`` shape
    (..., nx, n1) (period -1 rows). ``scaling`` is ``"fit"`` (fit on the
    period -2 sample means), a :class:`ProxyScaling`, or ``None`` (identity).
    Returns arrays ``A``, ``B``, ``C``, ``flagged``, ``slope``, ``intercept``.
    """
    c2 = np.asarray(c2, dtype=np.float64)
    c1 = np.asarray(c1, dtype=np.float64)
    n2x = c2.sum(axis=(-1, -2))
    n1x = c1.sum(axis=-1)
    for n, period in ((n2x, -2), (n1x, -1)):
        if np.any(n == 0):
            x = int(np.argwhere(n == 0)[0][-1])
            raise MissingCovariateCell(x if x_labels is None else x_labels[x], period)
    a = (c2.sum(axis=-2) @ y2_values) / n2x
    m1_train = (c2.sum(axis=-1) @ y1_values) / n2x
    cell = c2.sum(axis=-1)
    absent = cell == 0
    q = np.where(absent, a[..., None], (c2 @ y2_values) / np.where(absent, 1.0, cell))
    p1 = c1 / n1x[..., None]
    c = (p1 * q).sum(axis=-1)
    flagged = np.any(absent & (c1 > 0), axis=-1)
    if isinstance(scaling, str) and scaling == "fit":
        slope, intercept, _ = fit_scaling_arrays(m1_train, a, n2x)
        slope, intercept = slope[..., None], intercept[..., None]
    elif scaling is None:
        slope, intercept = 1.0, 0.0
    else:
        slope, intercept = scaling.slope, scaling.intercept
    b = slope * (p1 @ y1_values) + intercept
    return {"A": a, "B": b, "C": c, "flagged": flagged, "slope": slope, "intercept": intercept}


def count_cells(x, y1, y2, shape) -> np.ndarray:
    """Counts over an (nx, n1[, n2]) grid from integer codes; ``y2=None`` for period -1."""
    if y2 is None:
        nx, n1 = shape
        return _kernels.bincount_flat(np.asarray(x) * n1 + np.asarray(y1), nx * n1).reshape(nx, n1)
    nx, n1, n2 = shape
    flat = (np.asarray(x) * n1 + np.asarray(y1)) * n2 + np.asarray(y2)
    return _kernels.bincount_flat(flat, nx * n1 * n2).reshape(nx, n1, n2)
