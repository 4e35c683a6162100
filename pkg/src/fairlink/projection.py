"""Information projection of dyadic marginals onto a linear constraint set.

The projection of a product-Bernoulli model onto distributions satisfying
linear expectation constraints is again a product model whose active pairs
get a per-constraint logit shift. The shifts maximize a concave dual

    value(shift) = -sum_pairs log Z_pair(shift) + sum_c shift_c * target_c

where Z_pair = (1 - p) + p * exp(shift_c) for a pair governed by constraint
c and 1 otherwise. Because member sets are disjoint, the dual Hessian is
exactly diagonal and a damped per-coordinate Newton ascent converges fast.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .constraints import ConstraintSystem

logger = logging.getLogger(__name__)

__all__ = [
    "Projection",
    "ProjectionError",
    "InfeasibleTargetError",
    "dual_value",
    "project",
    "project_model",
    "fairness_grad_logits",
    "bernoulli_kl",
]


class ProjectionError(RuntimeError):
    """The dual ascent did not converge within the iteration cap."""


class InfeasibleTargetError(ValueError):
    """A constraint target lies outside the reachable open interval."""


@dataclass
class Projection:
    """Converged multipliers, projected per-pair marginals, and the divergence.

    kl is the KL-divergence from the projected model to the reference model,
    summed over pairs; dual_residual is the max-norm of the dual gradient
    (target minus achieved constraint value).
    """

    multipliers: np.ndarray
    marginals: np.ndarray
    kl: float
    dual_residual: float
    iterations: int
    tol: float
    converged: bool


def bernoulli_kl(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Elementwise KL(Bernoulli(q) || Bernoulli(p)), inputs clipped to the open interval."""
    q = np.clip(q, 1e-15, 1.0 - 1e-15)
    p = np.clip(p, 1e-15, 1.0 - 1e-15)
    return q * (np.log(q) - np.log(p)) + (1.0 - q) * (np.log1p(-q) - np.log1p(-p))


def dual_value(marginals, system: ConstraintSystem, targets, multipliers) -> float:
    """Dual objective at the given multipliers for reference marginals."""
    lam = np.asarray(multipliers, dtype=float)
    targets = np.asarray(targets, dtype=float)
    act = system.active_mask
    cidx = system.pair_constraint[act]
    p = np.clip(np.asarray(marginals, dtype=float)[act], 1e-15, 1.0 - 1e-15)
    log_z = np.logaddexp(np.log1p(-p), np.log(p) + lam[cidx])
    return float(-log_z.sum() + lam @ targets)


def _dual_from_logits(base, cidx, targets, lam):
    # log Z = logaddexp(log(1-p), log p + lam) with log p = -softplus(-logit)
    log_p1 = -np.logaddexp(0.0, -base)
    log_p0 = -np.logaddexp(0.0, base)
    log_z = np.logaddexp(log_p0, log_p1 + lam[cidx])
    return float(-log_z.sum() + lam @ targets)


def project(
    logits: np.ndarray,
    system: ConstraintSystem,
    targets,
    warm_start=None,
    tol: float = 1e-8,
    max_iters: int = 500,
    subsample: float | None = None,
    rng=None,
) -> Projection:
    """Project the model with the given (capped) per-pair logits onto the constraint set.

    Maximizes the concave dual by damped diagonal Newton ascent with Armijo
    backtracking, starting from warm_start when provided. Stops when the dual
    gradient's max-norm falls to tol; raises ProjectionError past max_iters.

    subsample, when set to a fraction in (0, 1), solves the multipliers on a
    uniform subset of the active pairs with targets scaled down proportionally
    to each constraint's sampled member count; the returned marginals, KL and
    residual are still computed on the full pair set.
    """
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n_c = system.n_constraints
    if targets.shape != (n_c,):
        raise ValueError("targets must have one entry per constraint")
    bad = np.flatnonzero((targets <= 0.0) | (targets >= system.member_counts))
    if len(bad):
        c = int(bad[0])
        raise InfeasibleTargetError(
            f"constraint {system.block_keys[c]}: target {targets[c]:.6g} is outside "
            f"the open interval (0, {int(system.member_counts[c])})"
        )

    act_idx = np.flatnonzero(system.active_mask)
    cidx = system.pair_constraint[act_idx]
    base = logits[act_idx]

    if subsample is not None:
        if not 0.0 < subsample < 1.0:
            raise ValueError("subsample must lie in (0, 1)")
        if rng is None:
            rng = np.random.default_rng()
        take = max(1, int(round(subsample * len(act_idx))))
        sel = np.sort(rng.choice(len(act_idx), size=take, replace=False))
        cidx_s = cidx[sel]
        base_s = base[sel]
        counts_s = np.bincount(cidx_s, minlength=n_c).astype(float)
        scale = counts_s / system.member_counts
        targets_s = targets * scale
        solve_mask = counts_s > 0
    else:
        cidx_s, base_s, targets_s = cidx, base, targets
        solve_mask = np.ones(n_c, dtype=bool)

    lam = np.zeros(n_c) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    if lam.shape != (n_c,):
        raise ValueError("warm_start must have one entry per constraint")

    prev = _dual_from_logits(base_s, cidx_s, targets_s, lam)
    iterations = 0
    converged = False
    residual = np.inf
    for _ in range(max_iters + 1):
        q = expit(base_s + lam[cidx_s])
        achieved = np.bincount(cidx_s, weights=q, minlength=n_c)
        grad = np.where(solve_mask, targets_s - achieved, 0.0)
        residual = float(np.abs(grad).max()) if n_c else 0.0
        if residual <= tol:
            converged = True
            break
        if iterations >= max_iters:
            break
        curv = np.bincount(cidx_s, weights=q * (1.0 - q), minlength=n_c)
        step = grad / np.maximum(curv, 1e-12)
        slope = float(grad @ step)
        t = 1.0
        for _ in range(60):
            cand = lam + t * step
            val = _dual_from_logits(base_s, cidx_s, targets_s, cand)
            if val >= prev + 1e-4 * t * slope:
                break
            t *= 0.5
        lam = cand
        prev = val
        iterations += 1
    if not converged:
        raise ProjectionError(
            f"projection did not converge in {max_iters} iterations "
            f"(residual {residual:.3e}, tol {tol:.1e})"
        )

    q_full = expit(base + lam[cidx])
    marginals = expit(logits)
    p_act = marginals[act_idx]
    marginals = marginals.copy()
    marginals[act_idx] = q_full
    achieved_full = np.bincount(cidx, weights=q_full, minlength=n_c)
    kl = float(bernoulli_kl(q_full, p_act).sum())
    return Projection(
        multipliers=lam,
        marginals=marginals,
        kl=kl,
        dual_residual=float(np.abs(targets - achieved_full).max()) if n_c else 0.0,
        iterations=iterations,
        tol=tol,
        converged=converged,
    )


def project_model(model, universe, system, targets, **kwargs) -> Projection:
    """Convenience wrapper projecting a DyadicModel over a pair universe."""
    return project(model.logits(universe.row, universe.col), system, targets, **kwargs)


def fairness_grad_logits(projection: Projection, marginals: np.ndarray) -> np.ndarray:
    """Per-pair gradient of the projection divergence w.r.t. the model logits.

    Valid only at a converged projection (envelope theorem at the inner
    maximizer, with targets held fixed): the weight of an active pair is its
    reference marginal minus its projected marginal; free pairs get 0.
    """
    if not projection.converged:
        raise ProjectionError("fairness gradient requires a converged projection")
    return np.asarray(marginals, dtype=float) - projection.marginals
