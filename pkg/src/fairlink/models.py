"""Dyadic-independence link predictors and their training primitives.

Every model assigns each candidate pair an independent Bernoulli edge
probability through a logit. Probabilities are clamped away from {0, 1} by
capping logits, so losses stay finite and the probability/logit accessors
remain mutually consistent.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import expit

from .graphs import Graph, PairUniverse, edge_indicator

logger = logging.getLogger(__name__)

__all__ = [
    "PROB_FLOOR",
    "LOGIT_CAP",
    "DyadicModel",
    "MaxEntModel",
    "DotProductModel",
    "CneModel",
    "fit_maxent",
    "model_cross_entropy",
    "cross_entropy_from_logits",
    "gradient_step",
    "Adam",
    "Sgd",
    "make_optimizer",
    "save_checkpoint",
    "load_checkpoint",
]

PROB_FLOOR = 1e-7
LOGIT_CAP = float(np.log1p(-PROB_FLOOR) - np.log(PROB_FLOOR))

# above this many gathered elements, pairwise logits go through an n x n
# product matrix instead of per-pair row gathers
_GATHER_LIMIT = 8_000_000


class DyadicModel:
    """Base class: per-pair Bernoulli model with an analytic parameter chain rule."""

    kind: str = "base"
    n: int

    def raw_logits(self, row: np.ndarray, col: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def logits(self, row, col) -> np.ndarray:
        """Log-odds of an edge, capped so probabilities stay in the open interval."""
        return np.clip(self.raw_logits(row, col), -LOGIT_CAP, LOGIT_CAP)

    def probabilities(self, row, col) -> np.ndarray:
        return expit(self.logits(row, col))

    def logit_gradient(self, row, col, weights: np.ndarray) -> np.ndarray:
        """Flat-parameter gradient of sum_k weights_k * logit(row_k, col_k).

        The cap is treated as identity here; it only binds on saturated pairs
        where the per-pair loss gradients vanish anyway.
        """
        raise NotImplementedError

    def get_params(self) -> np.ndarray:
        raise NotImplementedError

    def set_params(self, flat: np.ndarray) -> None:
        raise NotImplementedError

    @property
    def embeddings(self) -> np.ndarray | None:
        return None


class MaxEntModel(DyadicModel):
    """Per-node potentials: logit(i, j) = alpha_i + alpha_j."""

    kind = "maxent"

    def __init__(self, alpha):
        self.alpha = np.asarray(alpha, dtype=float).copy()
        self.n = self.alpha.size

    def raw_logits(self, row, col):
        return self.alpha[row] + self.alpha[col]

    def logit_gradient(self, row, col, weights):
        g = np.bincount(row, weights=weights, minlength=self.n)
        g += np.bincount(col, weights=weights, minlength=self.n)
        return g

    def get_params(self):
        return self.alpha.copy()

    def set_params(self, flat):
        self.alpha = np.asarray(flat, dtype=float).reshape(self.n).copy()


def _pair_weight_matrix(n, row, col, weights):
    w = np.zeros((n, n))
    w[row, col] = weights
    w[col, row] = weights
    return w


class DotProductModel(DyadicModel):
    """Embedding table decoded by inner products: logit(i, j) = x_i . x_j."""

    kind = "dot"

    def __init__(self, embeddings):
        x = np.asarray(embeddings, dtype=float)
        if x.ndim != 2:
            raise ValueError("embeddings must be an (n, dims) matrix")
        self.x = x.copy()
        self.n, self.dims = x.shape

    def raw_logits(self, row, col):
        if len(row) * self.dims <= _GATHER_LIMIT:
            return np.einsum("ij,ij->i", self.x[row], self.x[col])
        gram = self.x @ self.x.T
        return gram[row, col]

    def logit_gradient(self, row, col, weights):
        w = _pair_weight_matrix(self.n, row, col, weights)
        return (w @ self.x).ravel()

    def get_params(self):
        return self.x.ravel().copy()

    def set_params(self, flat):
        self.x = np.asarray(flat, dtype=float).reshape(self.n, self.dims).copy()

    @property
    def embeddings(self):
        return self.x


class CneModel(DyadicModel):
    """Distance decoder over a frozen degree-matching prior.

    The edge posterior mixes the prior with two zero-mean Gaussians on the
    embedding distance (spread sigma1 for edges, sigma2 for non-edges):

        logit(i, j) = prior_logit(i, j) + log(sigma2/sigma1)
                      + ||x_i - x_j||^2 * (1/(2 sigma2^2) - 1/(2 sigma1^2))

    With sigma2 > sigma1 the logit decreases with distance.
    """

    kind = "cne"

    def __init__(self, embeddings, prior: MaxEntModel, sigma1: float = 1.0, sigma2: float = 16.0):
        x = np.asarray(embeddings, dtype=float)
        if x.ndim != 2:
            raise ValueError("embeddings must be an (n, dims) matrix")
        if x.shape[0] != prior.n:
            raise ValueError("embedding rows must match the prior's node count")
        self.x = x.copy()
        self.n, self.dims = x.shape
        self.prior = prior
        self.sigma1 = float(sigma1)
        self.sigma2 = float(sigma2)
        self._coef = 0.5 / self.sigma2**2 - 0.5 / self.sigma1**2
        self._offset = np.log(self.sigma2) - np.log(self.sigma1)

    def _sq_dists(self, row, col):
        if len(row) * self.dims <= _GATHER_LIMIT:
            diff = self.x[row] - self.x[col]
            return np.einsum("ij,ij->i", diff, diff)
        sq = np.einsum("ij,ij->i", self.x, self.x)
        gram = self.x @ self.x.T
        return np.maximum(sq[row] + sq[col] - 2.0 * gram[row, col], 0.0)

    def raw_logits(self, row, col):
        return self.prior.logits(row, col) + self._offset + self._coef * self._sq_dists(row, col)

    def logit_gradient(self, row, col, weights):
        w = _pair_weight_matrix(self.n, row, col, weights)
        sums = w.sum(axis=1)
        grad = 2.0 * self._coef * (sums[:, None] * self.x - w @ self.x)
        return grad.ravel()

    def get_params(self):
        return self.x.ravel().copy()

    def set_params(self, flat):
        self.x = np.asarray(flat, dtype=float).reshape(self.n, self.dims).copy()

    @property
    def embeddings(self):
        return self.x


def fit_maxent(
    graph: Graph,
    universe: PairUniverse,
    max_iters: int = 100,
    alpha_bound: float = 30.0,
    degree_tol: float = 1e-4,
    polish: bool = True,
) -> MaxEntModel:
    """Fit node potentials so each expected degree matches the empirical degree.

    The Bernoulli log-likelihood over candidate pairs is concave in alpha and
    its gradient is exactly the degree residual, so a box-bounded quasi-Newton
    solve followed by an optional matrix-free Newton polish drives
    max_i |sum_j p_ij - deg_i| below degree_tol. The box absorbs nodes whose
    optimum lies at infinity (degree 0, or degree equal to the number of
    candidate partners).
    """
    n = graph.n
    row, col = universe.row, universe.col
    if universe.size == 0:
        return MaxEntModel(np.zeros(n))
    deg = graph.degrees().astype(float)
    cand = np.bincount(row, minlength=n) + np.bincount(col, minlength=n)
    saturated = (cand > 0) & (deg >= cand)
    if np.any(saturated):
        logger.warning(
            "%d node(s) are adjacent to every candidate partner; their "
            "potentials are clamped to +/-%g", int(saturated.sum()), alpha_bound,
        )

    def objective(alpha):
        z = alpha[row] + alpha[col]
        nll = float(np.logaddexp(0.0, z).sum() - deg @ alpha)
        p = expit(z)
        g = np.bincount(row, weights=p, minlength=n)
        g += np.bincount(col, weights=p, minlength=n)
        return nll, g - deg

    res = minimize(
        objective,
        np.zeros(n),
        jac=True,
        method="L-BFGS-B",
        bounds=[(-alpha_bound, alpha_bound)] * n,
        options={"maxiter": max_iters, "maxfun": 10 * max_iters, "ftol": 1e-14, "gtol": 1e-8},
    )
    alpha = np.asarray(res.x, dtype=float)

    if polish:
        for _ in range(50):
            z = alpha[row] + alpha[col]
            p = expit(z)
            g = np.bincount(row, weights=p, minlength=n)
            g += np.bincount(col, weights=p, minlength=n)
            g -= deg
            if np.abs(g).max() <= degree_tol:
                break
            w = p * (1.0 - p)
            s = np.bincount(row, weights=w, minlength=n)
            s += np.bincount(col, weights=w, minlength=n)

            def hessp(v, w=w, s=s):
                out = s * v
                out += np.bincount(row, weights=w * v[col], minlength=n)
                out += np.bincount(col, weights=w * v[row], minlength=n)
                return out + 1e-12 * v

            op = LinearOperator((n, n), matvec=hessp)
            step, _ = cg(op, -g, rtol=1e-10, atol=0.0, maxiter=200)
            alpha = np.clip(alpha + step, -alpha_bound, alpha_bound)
        else:
            logger.warning("degree residual still above %g after polish", degree_tol)
    return MaxEntModel(alpha)


def cross_entropy_from_logits(logits: np.ndarray, indicator: np.ndarray) -> float:
    """Bernoulli cross-entropy of capped logits against a 0/1 edge indicator."""
    return float(np.logaddexp(0.0, logits).sum() - logits[indicator].sum())


def model_cross_entropy(model: DyadicModel, graph: Graph, universe: PairUniverse) -> float:
    """Negative log-likelihood of the observed adjacency under the model, over all candidate pairs."""
    ind = edge_indicator(graph, universe)
    return cross_entropy_from_logits(model.logits(universe.row, universe.col), ind)


@dataclass
class Sgd:
    """Plain gradient descent step."""

    lr: float

    def update(self, grad: np.ndarray) -> np.ndarray:
        return -self.lr * grad


@dataclass
class Adam:
    """Adaptive-moment gradient step with bias correction."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self._m = None
        self._v = None
        self._t = 0

    def update(self, grad: np.ndarray) -> np.ndarray:
        if self._m is None:
            self._m = np.zeros_like(grad)
            self._v = np.zeros_like(grad)
        self._t += 1
        self._m = self.beta1 * self._m + (1.0 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1.0 - self.beta2) * grad * grad
        mhat = self._m / (1.0 - self.beta1**self._t)
        vhat = self._v / (1.0 - self.beta2**self._t)
        return -self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr=lr)
    if kind == "sgd":
        return Sgd(lr=lr)
    raise ValueError(f"unknown optimizer '{kind}'")


def gradient_step(model: DyadicModel, optimizer, row, col, weights) -> None:
    """Apply one optimizer update from per-pair loss gradients w.r.t. logits."""
    if not np.all(np.isfinite(weights)):
        bad = int(np.flatnonzero(~np.isfinite(weights))[0])
        raise ValueError(f"non-finite gradient weight at pair index {bad}")
    grad = model.logit_gradient(row, col, weights)
    model.set_params(model.get_params() + optimizer.update(grad))


def save_checkpoint(model: DyadicModel, path, seed=None, config=None) -> None:
    """Serialize a model to JSON: kind, shapes, flat parameters, seed, config echo."""
    payload = {"kind": model.kind, "n": model.n, "seed": seed, "config": config or {}}
    if isinstance(model, MaxEntModel):
        payload["alpha"] = model.alpha.tolist()
    elif isinstance(model, DotProductModel):
        payload["dims"] = model.dims
        payload["embeddings"] = model.x.ravel().tolist()
    elif isinstance(model, CneModel):
        payload["dims"] = model.dims
        payload["embeddings"] = model.x.ravel().tolist()
        payload["sigma1"] = model.sigma1
        payload["sigma2"] = model.sigma2
        payload["prior_alpha"] = model.prior.alpha.tolist()
    else:
        raise ValueError(f"cannot checkpoint model kind '{model.kind}'")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> DyadicModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    kind = payload["kind"]
    n = payload["n"]
    if kind == "maxent":
        return MaxEntModel(np.array(payload["alpha"]))
    if kind == "dot":
        x = np.array(payload["embeddings"]).reshape(n, payload["dims"])
        return DotProductModel(x)
    if kind == "cne":
        x = np.array(payload["embeddings"]).reshape(n, payload["dims"])
        prior = MaxEntModel(np.array(payload["prior_alpha"]))
        return CneModel(x, prior, sigma1=payload["sigma1"], sigma2=payload["sigma2"])
    raise ValueError(f"unknown checkpoint kind '{kind}'")
