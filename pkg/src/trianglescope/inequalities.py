"""Asymmetry penalties and the conjectured Bell-type inequalities.

The penalty ``Delta_l`` sums, over the three outcome classes, the
deviations of each probability from the mean of its class.  Combined with
``s111`` it gives the score ``f_w = w s111 - (1-w) Delta_l``; a local
model that beats the four-outcome reference point on this score refutes
the corresponding inequality.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dist_core import OutcomeDistribution, ValidationError, class_masks, sym_coords, to_fraction

EJM_S111 = Fraction(25, 64)

# Optimal weights located by training; the displayed coefficients are
# derived from them so that both forms stay consistent.
W_STAR = {1: 0.678, 2: 0.161}
RHS = {1: 0.289, 2: 0.316}


def coefficient(l: int) -> float:
    w = W_STAR[l]
    return (1 - w) / w


def _check_four(p: OutcomeDistribution):
    if p.n_outcomes != 4:
        raise ValidationError("the asymmetry penalty is defined for four outcomes")


def _check_l(l):
    if l not in (1, 2):
        raise ValidationError("penalty exponent l must be 1 or 2")


def _class_terms(values, l):
    if isinstance(values[0], Fraction) or isinstance(values[0], int):
        mean = sum(values, Fraction(0)) / len(values)
        return sum((abs(mean - v) ** l for v in values), Fraction(0))
    arr = np.asarray(values, dtype=float)
    return float(np.sum(np.abs(arr.mean() - arr) ** l))


def delta_penalty(p: OutcomeDistribution, l: int):
    """Summed class-wise deviation from the class mean (exact on rationals)."""
    _check_four(p)
    _check_l(l)
    masks = class_masks(4)
    return sum((_class_terms(list(p.probs[masks[k]]), l) for k in ("111", "112", "123")),
               Fraction(0) if p.exact else 0.0)


def delta_penalty_111(p: OutcomeDistribution, l: int):
    """Penalty restricted to the all-equal class (a control that fails)."""
    _check_four(p)
    _check_l(l)
    return _class_terms(list(p.probs[class_masks(4)["111"]]), l)


def marginal_penalty(p: OutcomeDistribution, l: int):
    """Deviation of all single-party marginals from uniform (a control that fails)."""
    _check_l(l)
    n = p.n_outcomes
    uniform = Fraction(1, n) if p.exact else 1.0 / n
    total = Fraction(0) if p.exact else 0.0
    for party in range(3):
        for v in p.marginal(party):
            total += abs(v - uniform) ** l
    return total


def delta_penalty_array(p: np.ndarray, l: int) -> float:
    masks = class_masks(p.shape[0])
    return float(sum(np.sum(np.abs(p[m] - p[m].mean()) ** l) for m in masks.values() if m.any()))


def delta_penalty_grad(p: np.ndarray, l: int) -> np.ndarray:
    """Gradient of ``Delta_l``; the subgradient of ``|x|`` at 0 is taken as 0."""
    g = np.zeros_like(p)
    for mask in class_masks(p.shape[0]).values():
        if not mask.any():
            continue
        d = p[mask] - p[mask].mean()
        if l == 2:
            g[mask] = 2 * d
        else:
            s = np.sign(d)
            g[mask] = s - s.mean()
    return g


@dataclass(frozen=True)
class InequalitySpec:
    w: object
    l: int  # noqa: E741
    rhs: object = None

    def __post_init__(self):
        _check_l(self.l)
        if not 0 <= self.w <= 1:
            raise ValidationError("w outside [0, 1]")


def f_w(p: OutcomeDistribution, spec: InequalitySpec):
    w = to_fraction(spec.w) if p.exact and not isinstance(spec.w, float) else spec.w
    if not p.exact:
        w = float(w)
    return w * sym_coords(p).s111 - (1 - w) * delta_penalty(p, spec.l)


@dataclass(frozen=True)
class ConjectureReport:
    lhs_l1: float
    lhs_l2: float
    violates_l1: bool
    violates_l2: bool


def evaluate_conjectured(p: OutcomeDistribution) -> ConjectureReport:
    s111 = float(sym_coords(p).s111)
    lhs1 = s111 - coefficient(1) * float(delta_penalty(p, 1))
    lhs2 = s111 - coefficient(2) * float(delta_penalty(p, 2))
    return ConjectureReport(lhs1, lhs2, lhs1 > RHS[1], lhs2 > RHS[2])


def delta_w_bound(p_local: OutcomeDistribution, w, l: int):
    """Upper bound on the gap implied by one known local distribution."""
    delta = delta_penalty(p_local, l)
    s111 = sym_coords(p_local).s111
    if p_local.exact and not isinstance(w, float):
        w = to_fraction(w)
        return delta + w * (EJM_S111 - s111 - delta)
    return float(delta) + float(w) * (float(EJM_S111) - float(s111) - float(delta))


def delta_w_bound_coefficients(p_local: OutcomeDistribution, l: int):
    """``(intercept, slope)`` of the affine bound in ``w``."""
    delta = delta_penalty(p_local, l)
    s111 = sym_coords(p_local).s111
    return delta, EJM_S111 - s111 - delta


@dataclass
class DeltaEstimate:
    w: float
    l: int  # noqa: E741
    delta_estimate: float
    f_best: float
    best_model: object
    restart_count: int
    seed: int
    restart_deltas: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    provenance: str = "trained inner estimate: max over restarts, so the gap is biased upwards"


def estimate_delta_w(w, l, train_config, threads: int = 1) -> DeltaEstimate:
    """Train against ``-f_w`` and report the gap to the reference point."""
    from .nnlocal import InequalityObjective, TrainConfig, train

    objective = InequalityObjective(float(w), int(l))
    cfg = TrainConfig(**{**train_config.__dict__, "objective": objective, "n_outcomes": 4})
    result = train(cfg, threads=threads)
    p_best = result.distribution
    f_best = float(f_w(p_best, InequalitySpec(float(w), int(l))))
    ejm_value = float(w) * float(EJM_S111)
    # each restart's final loss is -f_w of its model
    restart_deltas = [ejm_value + loss for loss in result.restart_losses]
    finite = [d for d in restart_deltas if d == d]
    summary = {"min": min(finite), "median": statistics.median(finite)} if finite else {}
    return DeltaEstimate(float(w), int(l), ejm_value - f_best, f_best, result.model,
                         cfg.restarts, cfg.seed, restart_deltas, summary)


def estimate_csv_rows(estimates) -> str:
    lines = ["w,l,f_best,delta_estimate,restart_count,seed"]
    for e in estimates:
        lines.append(f"{e.w:.6g},{e.l},{e.f_best:.10g},{e.delta_estimate:.10g},{e.restart_count},{e.seed}")
    return "\n".join(lines) + "\n"
