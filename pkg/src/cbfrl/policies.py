"""Stochastic policies over continuous actions and their score machinery.

Two families:

* :class:`BetaBoxPolicy` — per-dimension Beta distributions rescaled onto a
  state-dependent box. When the box is the safe action set itself, every
  sample is admissible by construction and the truncation normalization is
  exactly one.
* :class:`GaussianClippedPolicy` — diagonal Gaussian with a learnable
  state-independent log-std vector, clipped to a fixed box when executed.
  Serves both as the unconstrained baseline and as the base distribution
  for the generic truncation machinery.

The generic machinery (rejection sampling, Monte-Carlo normalization of the
truncated density, and the corrected score) works for any base policy whose
support covers the safe set; the Monte-Carlo score shares one set of uniform
samples between the normalization estimate and its gradient so the result is
the exact gradient of a single realized objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .nets import Head, MlpSpec, init_params, mlp_backward, mlp_forward_heads, param_count
from .safety import ActionBox, Interval
from .stochastics import Rng, beta_sample, BetaParams

__all__ = [
    "SafeSetSamplingFailed",
    "NormalizationUnderflow",
    "ScoreEstimate",
    "BetaBoxPolicy",
    "GaussianClippedPolicy",
    "box_beta_log_prob",
    "box_beta_entropy",
    "beta_score_upstream",
    "beta_entropy_upstream",
    "rejection_truncated_sample",
    "estimate_normalization",
    "estimate_normalization_quadrature",
    "truncated_score",
    "truncated_score_quadrature",
]

# Inward nudge applied when a unit-box coordinate sits on a face, so
# log-densities stay finite for samples that land there by rounding.
FACE_NUDGE = 1e-12

NORMALIZATION_FLOOR = 1e-12


class SafeSetSamplingFailed(Exception):
    """Rejection sampling exhausted its attempt budget; the base policy
    puts vanishing mass on the safe set."""


class NormalizationUnderflow(Exception):
    """Estimated mass of the safe set under the base policy is numerically zero."""


@dataclass(frozen=True)
class ScoreEstimate:
    """Score of the truncated policy plus the normalization it divided by."""

    score: np.ndarray
    normalization: float
    mc_samples_used: int


# ---------------------------------------------------------------------------
# box-scaled Beta density helpers (shared by the policy and the trainers)
# ---------------------------------------------------------------------------


def _beta_log_pdf_interior(alpha, beta, u_hat):
    """Beta log-density for strictly interior points; fully vectorized."""
    return (
        gammaln(alpha + beta)
        - gammaln(alpha)
        - gammaln(beta)
        + (alpha - 1.0) * np.log(u_hat)
        + (beta - 1.0) * np.log1p(-u_hat)
    )


def _to_unit(u, box: ActionBox):
    """Map an action into unit-box coordinates, nudged off the faces.

    Degenerate dimensions map to 0.5 (their density contribution is zero).
    """
    width = box.width
    u_hat = np.full(box.dim, 0.5)
    live = width > 0.0
    u_hat[live] = (np.asarray(u, dtype=float)[live] - box.lower[live]) / width[live]
    return np.clip(u_hat, FACE_NUDGE, 1.0 - FACE_NUDGE), live


def box_beta_log_prob(alpha, beta, u, box: ActionBox) -> float:
    """Log-density at u of independent Betas rescaled onto the box.

    Returns -inf when u lies strictly outside the box.
    """
    u = np.asarray(u, dtype=float)
    if not box.contains(u, tol=0.0):
        return -np.inf
    u_hat, live = _to_unit(u, box)
    if not live.any():
        return 0.0
    terms = _beta_log_pdf_interior(np.asarray(alpha), np.asarray(beta), u_hat)
    return float(terms[live].sum() - np.log(box.width[live]).sum())


def box_beta_entropy(alpha, beta, box: ActionBox) -> float:
    """Entropy of the box-scaled Beta: Beta entropy plus the log box widths."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    live = box.width > 0.0
    a, b = alpha[live], beta[live]
    ln_b = gammaln(a) + gammaln(b) - gammaln(a + b)
    ent = (
        ln_b
        - (a - 1.0) * digamma(a)
        - (b - 1.0) * digamma(b)
        + (a + b - 2.0) * digamma(a + b)
    )
    return float(ent.sum() + np.log(box.width[live]).sum())


def beta_score_upstream(alpha, beta, u_hat, live):
    """d log-pdf / d(alpha, beta) rows, zeroed on degenerate dimensions."""
    da = digamma(alpha + beta) - digamma(alpha) + np.log(u_hat)
    db = digamma(alpha + beta) - digamma(beta) + np.log1p(-u_hat)
    da = np.where(live, da, 0.0)
    db = np.where(live, db, 0.0)
    return np.concatenate([da, db], axis=-1)


def beta_entropy_upstream(alpha, beta, live):
    """dH / d(alpha, beta) rows for the entropy bonus."""
    tri_ab = polygamma(1, alpha + beta)
    da = -(alpha - 1.0) * polygamma(1, alpha) + (alpha + beta - 2.0) * tri_ab
    db = -(beta - 1.0) * polygamma(1, beta) + (alpha + beta - 2.0) * tri_ab
    da = np.where(live, da, 0.0)
    db = np.where(live, db, 0.0)
    return np.concatenate([da, db], axis=-1)


# ---------------------------------------------------------------------------
# Beta policy on a state-dependent box
# ---------------------------------------------------------------------------


class BetaBoxPolicy:
    """Beta policy whose shape parameters come from a network head pair.

    Both heads pass through softplus + 1, keeping alpha, beta > 1 so the
    per-dimension densities are unimodal and vanish at the box faces.
    """

    family = "beta_box"

    def __init__(self, spec: MlpSpec, params: np.ndarray, action_dim: int):
        self.spec = spec
        self.params = np.asarray(params, dtype=float)
        self.action_dim = int(action_dim)

    @classmethod
    def create(cls, feature_dim: int, action_dim: int, hidden=(64, 64), rng: Rng | None = None):
        spec = MlpSpec(
            tuple([feature_dim, *hidden, 2 * action_dim]),
            (
                Head("alpha", action_dim, "softplus_plus_one"),
                Head("beta", action_dim, "softplus_plus_one"),
            ),
        )
        params = init_params(spec, rng if rng is not None else Rng(0))
        return cls(spec, params, action_dim)

    def with_params(self, params: np.ndarray) -> "BetaBoxPolicy":
        return BetaBoxPolicy(self.spec, params, self.action_dim)

    def dist_params(self, x):
        heads = mlp_forward_heads(self.spec, self.params, x)
        return heads["alpha"], heads["beta"]

    def sample(self, x, box: ActionBox, rng: Rng) -> np.ndarray:
        alpha, beta = self.dist_params(x)
        u = np.empty(box.dim)
        for i in range(box.dim):
            if box.width[i] == 0.0:
                u[i] = box.lower[i]
            else:
                u_hat = beta_sample(BetaParams(float(alpha[i]), float(beta[i])), rng)
                u[i] = box.lower[i] + u_hat * box.width[i]
        return u

    def log_prob(self, x, u, box: ActionBox) -> float:
        alpha, beta = self.dist_params(x)
        return box_beta_log_prob(alpha, beta, u, box)

    def score(self, x, u, box: ActionBox) -> np.ndarray:
        """Gradient of log_prob with respect to the flat parameters.

        The box-scaling Jacobian is parameter-free, so only the Beta shape
        terms contribute.
        """
        u = np.asarray(u, dtype=float)
        if not box.contains(u):
            raise ValueError("action lies outside the policy's box")
        alpha, beta = self.dist_params(x)
        u_hat, live = _to_unit(u, box)
        upstream = beta_score_upstream(alpha, beta, u_hat, live)
        return mlp_backward(self.spec, self.params, x, upstream)

    def entropy(self, x, box: ActionBox) -> float:
        alpha, beta = self.dist_params(x)
        return box_beta_entropy(alpha, beta, box)

    def mean_action(self, x, box: ActionBox) -> np.ndarray:
        """Deterministic action: the distribution mean mapped into the box."""
        alpha, beta = self.dist_params(x)
        return box.lower + (alpha / (alpha + beta)) * box.width


# ---------------------------------------------------------------------------
# clipped Gaussian baseline
# ---------------------------------------------------------------------------


class GaussianClippedPolicy:
    """Diagonal Gaussian with network mean and global learnable log-std.

    The parameter vector is [network parameters | log_std (one per action
    dimension)]. Sampling clips to the fixed box; densities and scores are
    those of the unclipped Gaussian, matching the usual baseline practice.
    """

    family = "gaussian_clipped"

    def __init__(self, spec: MlpSpec, params: np.ndarray, action_dim: int, clip_box: ActionBox):
        self.spec = spec
        self.params = np.asarray(params, dtype=float)
        self.action_dim = int(action_dim)
        self.clip_box = clip_box
        if self.params.shape != (param_count(spec) + action_dim,):
            raise ValueError("parameter vector must be net params plus one log-std per action dim")

    @classmethod
    def create(cls, feature_dim: int, action_dim: int, clip_box: ActionBox, hidden=(64, 64), rng: Rng | None = None):
        spec = MlpSpec(
            tuple([feature_dim, *hidden, action_dim]),
            (Head("mean", action_dim, "identity"),),
        )
        net = init_params(spec, rng if rng is not None else Rng(0))
        params = np.concatenate([net, np.zeros(action_dim)])
        return cls(spec, params, action_dim, clip_box)

    def with_params(self, params: np.ndarray) -> "GaussianClippedPolicy":
        return GaussianClippedPolicy(self.spec, params, self.action_dim, self.clip_box)

    @property
    def net_params(self) -> np.ndarray:
        return self.params[: -self.action_dim]

    @property
    def log_std(self) -> np.ndarray:
        return self.params[-self.action_dim :]

    def dist_params(self, x):
        mean = mlp_forward_heads(self.spec, self.net_params, x)["mean"]
        return mean, np.exp(self.log_std)

    def sample_unclipped(self, x, rng: Rng) -> np.ndarray:
        mean, std = self.dist_params(x)
        return mean + std * np.asarray(rng.normal(self.action_dim))

    def sample(self, x, rng: Rng) -> np.ndarray:
        return self.clip_box.clip(self.sample_unclipped(x, rng))

    def log_prob(self, x, u) -> float:
        mean, std = self.dist_params(x)
        z = (np.asarray(u, dtype=float) - mean) / std
        return float(-0.5 * (z**2).sum() - np.log(std).sum() - 0.5 * len(std) * np.log(2.0 * np.pi))

    def pdf(self, x, u) -> float:
        return float(np.exp(self.log_prob(x, u)))

    def score(self, x, u) -> np.ndarray:
        mean, std = self.dist_params(x)
        z = (np.asarray(u, dtype=float) - mean) / std
        net_grad = mlp_backward(self.spec, self.net_params, x, z / std)
        return np.concatenate([net_grad, z**2 - 1.0])

    def entropy(self) -> float:
        return float(self.log_std.sum() + 0.5 * self.action_dim * np.log(2.0 * np.pi * np.e))

    def mean_action(self, x) -> np.ndarray:
        mean, _ = self.dist_params(x)
        return self.clip_box.clip(mean)


# ---------------------------------------------------------------------------
# generic truncation machinery
# ---------------------------------------------------------------------------


def _density_ops(base, x, safe_set, support_box: ActionBox | None):
    """(log_pdf, score) callables of the base density at state x.

    A BetaBoxPolicy needs its support box bound explicitly; when none is
    given, its support is taken to be the safe set's own sampling box (the
    intended deployment), which makes truncation vacuous.
    """
    if isinstance(base, BetaBoxPolicy):
        box = support_box if support_box is not None else safe_set.sampling_box
        return (lambda u: base.log_prob(x, u, box)), (lambda u: base.score(x, u, box))
    return (lambda u: base.log_prob(x, u)), (lambda u: base.score(x, u))


def _truncation_is_vacuous(base, safe_set, support_box) -> bool:
    return isinstance(base, BetaBoxPolicy) and support_box is None


def rejection_truncated_sample(base, x, membership, rng: Rng, max_attempts: int, support_box: ActionBox | None = None) -> np.ndarray:
    """First base-policy sample that lands in the safe set.

    `membership` is a callable testing u for membership in C(x). Raises
    :class:`SafeSetSamplingFailed` after max_attempts rejections.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be at least 1")
    if isinstance(base, BetaBoxPolicy) and support_box is None:
        raise ValueError("rejection sampling from a BetaBoxPolicy needs its support box")
    for _ in range(max_attempts):
        if isinstance(base, BetaBoxPolicy):
            u = base.sample(x, support_box, rng)
        elif isinstance(base, GaussianClippedPolicy):
            u = base.sample_unclipped(x, rng)
        else:
            u = base.sample(x, rng)
        if membership(u):
            return u
    raise SafeSetSamplingFailed(f"no admissible sample in {max_attempts} attempts")


def _uniform_samples(safe_set, m: int, rng: Rng):
    return [safe_set.sample_uniform(rng) for _ in range(m)]


def estimate_normalization(base, x, safe_set, m: int, rng: Rng, support_box: ActionBox | None = None) -> float:
    """Monte-Carlo estimate of the base-policy mass on the safe set.

    Draws m points uniformly from the set and returns
    volume * mean(density); unbiased for the true mass.
    """
    if m < 1:
        raise ValueError("need at least one Monte-Carlo sample")
    volume = safe_set.volume
    if volume <= 0.0:
        raise ValueError("safe set has zero volume")
    log_pdf, _ = _density_ops(base, x, safe_set, support_box)
    us = _uniform_samples(safe_set, m, rng)
    vals = np.array([np.exp(log_pdf(u)) for u in us])
    return float(volume * vals.mean())


def _gauss_legendre_nodes(iv: Interval, n_nodes: int):
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    half = 0.5 * (iv.hi - iv.lo)
    return iv.lo + half * (nodes + 1.0), weights * half


def estimate_normalization_quadrature(base, x, iv: Interval, n_nodes: int = 64, support_box: ActionBox | None = None) -> float:
    """Deterministic Gauss-Legendre variant for one-dimensional intervals."""
    if iv.volume <= 0.0:
        raise ValueError("interval has zero volume")
    log_pdf, _ = _density_ops(base, x, iv, support_box)
    nodes, weights = _gauss_legendre_nodes(iv, n_nodes)
    vals = np.array([np.exp(log_pdf(np.array([t]))) for t in nodes])
    return float(weights @ vals)


def _score_from_weighted_samples(base, x, u, safe_set, us, weights, normalization, support_box):
    """Assemble score = base score - (sum w_i grad pdf_i) / (sum w_i pdf_i).

    grad pdf_i = pdf_i * score_i, with the same points u_i in numerator and
    denominator, so the result is the exact gradient of the realized
    objective log pdf(u) - log(sum w_i pdf(u_i)).
    """
    if normalization < NORMALIZATION_FLOOR:
        raise NormalizationUnderflow(
            f"safe-set mass estimate {normalization:.3e} below {NORMALIZATION_FLOOR}"
        )
    log_pdf, score_fn = _density_ops(base, x, safe_set, support_box)
    num = None
    den = 0.0
    for u_i, w_i in zip(us, weights):
        p_i = float(np.exp(log_pdf(u_i)))
        if p_i == 0.0:
            continue
        g_i = w_i * p_i * score_fn(u_i)
        num = g_i if num is None else num + g_i
        den += w_i * p_i
    base_score = score_fn(u)
    if num is None:
        raise NormalizationUnderflow("all sampled densities vanished")
    return ScoreEstimate(base_score - num / den, normalization, len(us))


def truncated_score(base, x, u, safe_set, m: int, rng: Rng, support_box: ActionBox | None = None) -> ScoreEstimate:
    """Score of the truncated policy at (x, u) with Monte-Carlo normalization.

    For a BetaBoxPolicy whose support is the safe set itself the truncation
    is vacuous: the mass is exactly one and no correction is needed.
    """
    if _truncation_is_vacuous(base, safe_set, support_box):
        return ScoreEstimate(base.score(x, u, safe_set.sampling_box), 1.0, 0)
    us = _uniform_samples(safe_set, m, rng)
    return _truncated_score_given_samples(base, x, u, safe_set, us, support_box)


def _truncated_score_given_samples(base, x, u, safe_set, us, support_box=None) -> ScoreEstimate:
    log_pdf, _ = _density_ops(base, x, safe_set, support_box)
    volume = safe_set.volume
    m = len(us)
    weights = np.full(m, volume / m)
    normalization = float(sum(w * np.exp(log_pdf(u_i)) for u_i, w in zip(us, weights)))
    return _score_from_weighted_samples(base, x, u, safe_set, us, weights, normalization, support_box)


def truncated_score_quadrature(base, x, u, iv: Interval, n_nodes: int = 64, support_box: ActionBox | None = None) -> ScoreEstimate:
    """Deterministic variant using Gauss-Legendre nodes on an interval."""
    if _truncation_is_vacuous(base, iv, support_box):
        return ScoreEstimate(base.score(x, u, iv.sampling_box), 1.0, 0)
    log_pdf, _ = _density_ops(base, x, iv, support_box)
    nodes, weights = _gauss_legendre_nodes(iv, n_nodes)
    us = [np.array([t]) for t in nodes]
    normalization = float(sum(w * np.exp(log_pdf(u_i)) for u_i, w in zip(us, weights)))
    return _score_from_weighted_samples(base, x, u, iv, us, weights, normalization, support_box)
