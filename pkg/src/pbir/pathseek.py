"""Regularization-path seeking for PWLS reconstruction.

Two engines produce a sequence of images approximating ``mu(beta)`` over
``[beta1, beta2]`` without solving each problem from scratch:

* ratio-of-gradients (``ps_rog``): fixed-size updates on the fraction of
  pixels where the penalty pull is strongest relative to the data pull,
  interleaved with a few SQS steps at the KKT-estimated beta;
* direction-of-gradient (``ps_dog``): linearized-AL steps whose image update
  is confined to the penalty-descent half-space of the previous iterate.

Sign conventions follow ``solvers``: ``G`` is the ascent gradient of the data
term and ``grad_h`` the ascent gradient of the penalty, so ``-G`` and
``-grad_h`` are the respective descent directions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import solvers
from .simulate import HU_PER_MU, mu_to_hu
from .solvers import PWLSProblem, SolverState, admm_iterate, ls_gradient, make_subsets_for

log = logging.getLogger(__name__)

EPS_G = 1e-12


@dataclass
class PathConfig:
    beta1: float
    beta2: float
    n_frames: int = 40
    direction: str = "increasing"
    p: float = 0.2
    delta_v: float = 1.0  # HU
    n_opt: int = 2
    beta_ratio: float = 1.45
    n_subsets_ps: int | None = None
    n_subsets_opt: int | None = None
    rho: float = 0.5
    n_inner: int = 2
    advance_tol: float = 0.0  # HU RMS growth per loop still counted as "not increasing"

    def __post_init__(self):
        if not self.beta1 <= self.beta2:
            raise ValueError(f"beta1 must not exceed beta2 ({self.beta1} > {self.beta2})")
        if self.beta1 < 0:
            raise ValueError("beta1 must be non-negative")
        if not 0 < self.p <= 1:
            raise ValueError(f"p must be in (0, 1], got {self.p}")
        if self.delta_v <= 0:
            raise ValueError(f"delta_v must be positive, got {self.delta_v}")
        if self.direction not in ("increasing", "decreasing"):
            raise ValueError(f"direction must be 'increasing' or 'decreasing', got {self.direction!r}")
        if self.beta_ratio <= 1:
            raise ValueError(f"beta_ratio must exceed 1, got {self.beta_ratio}")
        if self.n_frames < 1 or self.n_opt < 0 or self.n_inner < 1:
            raise ValueError("n_frames >= 1, n_opt >= 0 and n_inner >= 1 required")
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.advance_tol < 0:
            raise ValueError(f"advance_tol must be non-negative, got {self.advance_tol}")

    def subsets(self, engine: str) -> tuple[int, int]:
        default = {"rog": (5, 20), "dog": (10, 10)}[engine]
        return (self.n_subsets_ps or default[0], self.n_subsets_opt or default[1])


@dataclass
class PathFrame:
    image: np.ndarray
    beta_assigned: float
    index: int
    distance: float = 0.0  # HU, L2 to the engine's reference endpoint
    n_updated: int = 0
    note: str = ""


@dataclass
class ReconPath:
    frames: list[PathFrame]
    config: PathConfig
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.frames)

    @property
    def betas(self) -> np.ndarray:
        return np.array([f.beta_assigned for f in self.frames])

    def images(self) -> list[np.ndarray]:
        return [f.image for f in self.frames]


def _hu_norm(a, b) -> float:
    return float(np.linalg.norm((np.asarray(a) - np.asarray(b)).ravel()) * HU_PER_MU)


def target_direction(mu_start, mu_end) -> np.ndarray:
    return np.sign(np.asarray(mu_end, dtype=np.float64) - np.asarray(mu_start, dtype=np.float64))


def ratio_of_gradients(problem: PWLSProblem, mu, direction: str = "increasing", subset=None,
                       eps: float = EPS_G) -> np.ndarray:
    """Signed ratio whose sign is the descent direction of the dominant term.

    Increasing beta: ``-grad_h / |G|`` (penalty descent over data pull).
    Decreasing beta: ``-G / |grad_h|`` (data descent over penalty pull).
    """
    g = ls_gradient(problem, mu, subset)
    gh = problem.penalty_gradient(mu)
    return _ratio(g, gh, direction, eps)


def _ratio(g, gh, direction, eps=EPS_G):
    if direction == "increasing":
        return -gh / np.maximum(np.abs(g), eps)
    return -g / np.maximum(np.abs(gh), eps)


def _quantile_update_set(lam, p) -> np.ndarray:
    """Pixels with ``|lam| >= t`` where ``t`` is the ``ceil(p*n)``-th largest nonzero magnitude."""
    mag = np.abs(lam).ravel()
    nonzero = np.flatnonzero(mag > 0)
    if nonzero.size == 0:
        return np.zeros(lam.shape, dtype=bool)
    k = min(max(int(math.floor(p * mag.size)), 1), nonzero.size)
    t = np.partition(mag[nonzero], nonzero.size - k)[nonzero.size - k]
    return (np.abs(lam) >= t) & (np.abs(lam) > 0)


def rog_step(problem: PWLSProblem, mu, target, config: PathConfig, subset=None,
             direction: str = "increasing"):
    """One fixed-size path update.  Returns ``(new_mu, n_updated, branch)``."""
    g = ls_gradient(problem, mu, subset)
    gh = problem.penalty_gradient(mu)
    lam = _ratio(g, gh, direction)
    d = target_direction(mu, target)
    step = config.delta_v / HU_PER_MU
    agree = gh * g > 0  # both descent directions point the same way
    new = mu.copy()
    new[agree] += step * np.sign(lam[agree])
    # the remaining pixels move towards the target where lam agrees with d
    lam = np.where(agree | (lam * d < 0) | (d == 0), 0.0, lam)
    sel = _quantile_update_set(lam, config.p)
    new[sel] += step * d[sel]
    n_agree, n_sel = int(agree.sum()), int(sel.sum())
    n = n_agree + n_sel
    branch = "agree+quantile" if n_agree and n_sel else ("agree" if n_agree else "quantile")
    return np.maximum(new, 0.0), n, branch


def ps_rog(problem: PWLSProblem, mu_beta1, mu_beta2, config: PathConfig) -> ReconPath:
    """Ratio-of-gradients path from ``mu_beta1`` towards ``mu_beta2``.

    With ``config.direction == 'decreasing'`` the roles swap: pass the large-beta
    image first (see ``ps_rog_reverse``).
    """
    start = np.asarray(mu_beta1, dtype=np.float64)
    target = np.asarray(mu_beta2, dtype=np.float64)
    if start.shape != target.shape or start.shape != problem.grid.shape:
        raise ValueError("endpoint images must match the problem grid")
    direction = config.direction
    n_ps, n_opt_subsets = config.subsets("rog")
    ps_scheme = make_subsets_for(problem, n_ps) if n_ps > 1 else None
    beta0 = config.beta1 if direction == "increasing" else config.beta2

    mu = start.copy()
    best = _hu_norm(mu, target)
    frames = [PathFrame(start.copy(), beta0, 0, best)]
    provenance = {"engine": "rog", "direction": direction, "n_subsets_ps": n_ps,
                  "n_subsets_opt": n_opt_subsets, "termination": "n_frames"}
    if best == 0.0:
        provenance["termination"] = "endpoints coincide"
        return ReconPath(frames, config, provenance)

    beta_hat = beta0
    stalls = 0
    k = 0
    while len(frames) < config.n_frames:
        try:
            beta_hat = solvers.estimate_beta(problem, mu)
        except ValueError:
            log.warning("beta estimate unavailable at frame %d; keeping %g", len(frames), beta_hat)
        if config.n_opt:
            mu = solvers.sqs_solve(problem.with_beta(max(beta_hat, 0.0)), mu, config.n_opt, n_opt_subsets)
        subset = None if ps_scheme is None else (ps_scheme, ps_scheme.order[k % n_ps])
        k += 1
        mu, n_upd, branch = rog_step(problem, mu, target, config, subset, direction)
        dist = _hu_norm(mu, target)
        frames.append(PathFrame(mu.copy(), float(beta_hat), len(frames), dist, n_upd, branch))
        if n_upd == 0:
            provenance["termination"] = "empty update set"
            log.warning("empty update set at frame %d; stopping", len(frames) - 1)
            break
        if dist < best:
            best, stalls = dist, 0
        else:
            stalls += 1
            if stalls >= 2:
                provenance["termination"] = "distance stopped decreasing"
                break
    return ReconPath(frames, config, provenance)


def ps_rog_reverse(problem: PWLSProblem, mu_beta2, mu_beta1, config: PathConfig) -> ReconPath:
    """Decreasing-beta ratio-of-gradients path from ``mu_beta2`` towards ``mu_beta1``."""
    cfg = PathConfig(**{**config.__dict__, "direction": "decreasing"})
    return ps_rog(problem, mu_beta2, mu_beta1, cfg)


def pocs_project(image, anchor, anchor_grad_h) -> np.ndarray:
    """Enforce ``mu >= 0`` then ``(mu - anchor) * anchor_grad_h <= 0`` (reset to anchor)."""
    mu = np.array(image, dtype=np.float64)
    mu[mu <= 0] = 0.0
    viol = (mu - anchor) * anchor_grad_h >= 0
    mu[viol] = np.asarray(anchor)[viol]
    return mu


def pocs_solve(problem: PWLSProblem, anchor, n_iters: int, n_subsets: int = 1) -> np.ndarray:
    """Gradient descent with direction-of-gradient POCS, warm-started at ``anchor``."""
    anchor = np.asarray(anchor, dtype=np.float64)
    gh = problem.penalty_gradient(anchor)
    seq = solvers._subset_sequence(problem, n_subsets)
    mu = anchor.copy()
    for _ in range(n_iters):
        for subset in seq:
            mu = pocs_project(solvers.sqs_step(problem, mu, subset), anchor, gh)
    return mu


def dog_objective(problem: PWLSProblem, mu, mu_k, s_tilde, rho) -> float:
    r = mu - mu_k + s_tilde
    return problem.beta * problem.penalty_value(mu) + 0.5 * rho * float(np.sum(problem.data_curvature * r * r))


def dog_subproblem(problem: PWLSProblem, mu_k, s_tilde, rho: float = 0.5, n_inner: int = 2,
                   anchor_grad_h=None) -> np.ndarray:
    """Image update of the AL step restricted to the penalty-descent half-space of ``mu_k``.

    Runs ``n_inner`` separable-surrogate steps, each followed by ``pocs_project``
    anchored at ``mu_k``.
    """
    if n_inner < 1:
        raise ValueError("n_inner must be at least 1")
    gh_k = problem.penalty_gradient(mu_k) if anchor_grad_h is None else anchor_grad_h
    dg = problem.data_curvature
    target = mu_k - s_tilde
    denom = rho * dg + problem.beta * problem.penalty_curvature
    mu = mu_k
    for _ in range(n_inner):
        grad = rho * dg * (mu - target)
        if problem.beta:
            grad = grad + problem.beta * problem.penalty_gradient(mu)
        mu = pocs_project(mu - grad / denom, mu_k, gh_k)
    return mu


def ps_dog(problem: PWLSProblem, mu_beta1, config: PathConfig,
           state: SolverState | None = None) -> ReconPath:
    """Direction-of-gradient path starting from the direct solve ``mu_beta1``.

    Each loop runs one constrained AL sweep and ``n_opt`` ordinary sweeps at the
    current beta, stores a frame, and multiplies beta by ``beta_ratio`` when the
    distance to ``mu_beta1`` did not grow.  Stops after the first frame computed
    at ``beta >= beta2`` or after ``n_frames`` frames.
    """
    start = np.asarray(mu_beta1, dtype=np.float64)
    if start.shape != problem.grid.shape:
        raise ValueError("initial image must match the problem grid")
    n_ps, n_opt_subsets = config.subsets("dog")
    beta = config.beta1
    if state is None:
        state = SolverState.start(problem.with_beta(beta), start, config.rho)
    frames = [PathFrame(start.copy(), beta, 0, 0.0)]
    provenance = {"engine": "dog", "n_subsets_ps": n_ps, "n_subsets_opt": n_opt_subsets,
                  "rho": config.rho, "n_inner": config.n_inner, "termination": "n_frames"}
    prev = 0.0
    slack = config.advance_tol * math.sqrt(start.size)

    def dog_prox(pb, mu_k, s_tilde, rho, n_inner):
        return dog_subproblem(pb, mu_k, s_tilde, rho, n_inner)

    while len(frames) < config.n_frames:
        pb = problem.with_beta(beta)
        admm_iterate(pb, state, 1, n_ps, config.n_inner, prox=dog_prox)
        if config.n_opt:
            admm_iterate(pb, state, config.n_opt, n_opt_subsets, config.n_inner)
        dist = _hu_norm(state.mu, start)
        frames.append(PathFrame(state.mu.copy(), beta, len(frames), dist))
        if beta >= config.beta2:
            provenance["termination"] = "reached beta2"
            break
        if dist <= prev + slack:
            beta *= config.beta_ratio
        prev = dist
    return ReconPath(frames, config, provenance)


def closest_frame(path, reference) -> tuple[int, float]:
    """Index and RMSD (HU) of the frame nearest ``reference``; ties go to the lower index."""
    frames = path.images() if isinstance(path, ReconPath) else list(path)
    if not frames:
        raise ValueError("empty path")
    ref = mu_to_hu(reference)
    best_i, best = 0, math.inf
    for i, img in enumerate(frames):
        r = float(np.sqrt(np.mean((mu_to_hu(img) - ref) ** 2)))
        if r < best:
            best_i, best = i, r
    return best_i, best
