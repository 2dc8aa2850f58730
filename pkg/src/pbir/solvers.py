"""Direct PWLS solvers: ordered-subsets SQS, linearized AL (ADMM), KKT beta estimate, FBP.

Images are attenuation maps in mm^-1 on the problem grid.  The penalty is
evaluated on HU values, so its gradient with respect to mu carries the factor
``HU_PER_MU`` and its curvature ``HU_PER_MU**2``.

Every gradient returned here is the ascent gradient.  Descent directions are
negated explicitly where they are used.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .geometry import (Projector, ScanGeometry, SubsetScheme, bit_reversal_order, get_projector,
                       make_subsets)
from .penalty import HuberPenalty
from .simulate import HU_PER_MU, Sinogram, mu_to_hu

log = logging.getLogger(__name__)

EPS_H = 1e-6  # HU, KKT candidate threshold on |grad h|


class SolverDivergence(RuntimeError):
    pass


@dataclass
class PWLSProblem:
    """``0.5 * sum w (P mu - l)^2 + beta * h(mu)`` subject to ``mu >= 0``."""

    projector: Projector
    l: np.ndarray
    w: np.ndarray
    penalty: HuberPenalty = field(default_factory=HuberPenalty)
    beta: float = 0.0
    geom: ScanGeometry | None = None

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        self.l = np.asarray(self.l, dtype=np.float64).reshape(self.projector.sino_shape)
        self.w = np.asarray(self.w, dtype=np.float64).reshape(self.projector.sino_shape)
        if np.any(self.w < 0):
            raise ValueError("negative statistical weights")
        self._dg = None

    @classmethod
    def from_sinogram(cls, sino: Sinogram, penalty: HuberPenalty | None = None,
                      beta: float = 0.0) -> "PWLSProblem":
        return cls(get_projector(sino.geom), sino.l, sino.w, penalty or HuberPenalty(), beta, sino.geom)

    @property
    def grid(self):
        return self.projector.grid

    def with_beta(self, beta: float) -> "PWLSProblem":
        p = PWLSProblem(self.projector, self.l, self.w, self.penalty, beta, self.geom)
        p._dg = self._dg
        return p

    @property
    def data_curvature(self) -> np.ndarray:
        """SQS curvature of the data term, ``P^T W P 1`` (floored to stay invertible)."""
        if self._dg is None:
            ones = np.ones(self.grid.shape)
            dg = self.projector.back(self.w * self.projector.forward(ones))
            floor = 1e-12 * max(float(dg.max()), 1.0)
            self._dg = np.maximum(dg, floor)
        return self._dg

    @property
    def penalty_curvature(self) -> np.ndarray:
        return HU_PER_MU ** 2 * self.penalty.curvature(self.grid.shape)

    def penalty_value(self, mu) -> float:
        return self.penalty.value(mu_to_hu(mu))

    def penalty_gradient(self, mu) -> np.ndarray:
        """d h / d mu."""
        return HU_PER_MU * self.penalty.gradient(mu_to_hu(mu))

    def subset_data(self, subset):
        if subset is None:
            return self.l, self.w
        scheme, idx = subset
        views = scheme.views(idx)
        return self.l[views], self.w[views]


def data_term(problem: PWLSProblem, mu) -> float:
    r = problem.projector.forward(mu) - problem.l
    return 0.5 * float(np.sum(problem.w * r * r))


def objective(problem: PWLSProblem, mu) -> float:
    return data_term(problem, mu) + problem.beta * problem.penalty_value(mu)


def ls_gradient(problem: PWLSProblem, mu, subset: tuple[SubsetScheme, int] | None = None) -> np.ndarray:
    """``P^T W (P mu - l)``; a subset estimate is scaled by the number of subsets."""
    l, w = problem.subset_data(subset)
    r = problem.projector.forward(mu, subset) - l
    g = problem.projector.back(w * r, subset)
    if subset is not None:
        g *= subset[0].n_subsets
    return g


def total_gradient(problem: PWLSProblem, mu, subset=None) -> np.ndarray:
    return ls_gradient(problem, mu, subset) + problem.beta * problem.penalty_gradient(mu)


def _subset_sequence(problem: PWLSProblem, n_subsets: int):
    if n_subsets == 1:
        return [None]
    scheme = make_subsets_for(problem, n_subsets)
    return [(scheme, m) for m in scheme.order]


def make_subsets_for(problem: PWLSProblem, n_subsets: int) -> SubsetScheme:
    if problem.geom is not None:
        return make_subsets(problem.geom, n_subsets)
    n_views = problem.projector.n_views
    if not 1 <= n_subsets <= n_views:
        raise ValueError(f"n_subsets must be in [1, {n_views}], got {n_subsets}")
    return SubsetScheme(n_subsets, tuple(v % n_subsets for v in range(n_views)),
                        tuple(bit_reversal_order(n_subsets)))


def sqs_step(problem: PWLSProblem, mu, subset=None) -> np.ndarray:
    """One separable-quadratic-surrogate update with nonnegativity."""
    grad = total_gradient(problem, mu, subset)
    denom = problem.data_curvature + problem.beta * problem.penalty_curvature
    return np.maximum(mu - grad / denom, 0.0)


class IterationLog:
    """Collects (iteration, objective, rmsd) rows and optionally writes them as CSV."""

    def __init__(self, reference_hu=None):
        self.reference_hu = reference_hu
        self.rows: list[tuple[int, float, float | None]] = []

    def record(self, problem, it, mu):
        rmsd = None
        if self.reference_hu is not None:
            rmsd = float(np.sqrt(np.mean((mu_to_hu(mu) - self.reference_hu) ** 2)))
        self.rows.append((it, objective(problem, mu), rmsd))

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["iteration", "objective", "rmsd_hu"])
            for it, obj, rmsd in self.rows:
                writer.writerow([it, repr(obj), "" if rmsd is None else repr(rmsd)])


def _check_divergence(obj0, obj, it):
    if not np.isfinite(obj) or obj - obj0 > 10 * abs(obj0) + 1e-300:
        raise SolverDivergence(f"objective rose from {obj0:.6g} to {obj:.6g} at iteration {it}")


def sqs_solve(problem: PWLSProblem, init, n_iters: int, n_subsets: int = 1,
              log_to: IterationLog | None = None) -> np.ndarray:
    """Ordered-subsets SQS; one iteration is a sweep over all subsets."""
    mu = np.asarray(init, dtype=np.float64).copy()
    if np.any(mu < 0):
        raise ValueError("initial image must be non-negative")
    seq = _subset_sequence(problem, n_subsets)
    obj0 = objective(problem, mu)
    if log_to is not None:
        log_to.record(problem, 0, mu)
    for it in range(1, n_iters + 1):
        for subset in seq:
            mu = sqs_step(problem, mu, subset)
        if log_to is not None:
            log_to.record(problem, it, mu)
            _check_divergence(obj0, log_to.rows[-1][1], it)
    if log_to is None:
        _check_divergence(obj0, objective(problem, mu), n_iters)
    return mu


@dataclass
class SolverState:
    """Linearized-AL iterate: image ``mu``, split-residual backprojection ``v``, and
    ``zeta``, the (subset) data gradient at ``mu`` reused by the next ``s`` update."""

    mu: np.ndarray
    v: np.ndarray
    zeta: np.ndarray
    rho: float = 0.5
    iteration: int = 0
    cursor: int = 0

    @classmethod
    def start(cls, problem: PWLSProblem, mu, rho: float = 0.5) -> "SolverState":
        if rho <= 0:
            raise ValueError(f"rho must be positive, got {rho}")
        mu = np.asarray(mu, dtype=np.float64).copy()
        g = ls_gradient(problem, mu)
        return cls(mu, g.copy(), g, rho)


def prox_sqs(problem: PWLSProblem, mu_k, s_tilde, rho, n_inner=2) -> np.ndarray:
    """Approximate ``argmin_{mu>=0} beta*h(mu) + rho/2 * sum D_g (mu - mu_k + s_tilde)^2``
    by ``n_inner`` separable-surrogate steps started at ``mu_k``."""
    dg = problem.data_curvature
    target = mu_k - s_tilde
    denom = rho * dg + problem.beta * problem.penalty_curvature
    mu = mu_k
    for _ in range(n_inner):
        grad = rho * dg * (mu - target)
        if problem.beta:
            grad = grad + problem.beta * problem.penalty_gradient(mu)
        mu = np.maximum(mu - grad / denom, 0.0)
    return mu


def admm_step(problem: PWLSProblem, state: SolverState, subset=None, n_inner: int = 2,
              prox=None) -> SolverState:
    """One linearized-AL update (s, mu, v) in place on ``state``.

    ``prox(problem, mu_k, s_tilde, rho, n_inner)`` replaces the image update;
    ``s_tilde = s / (rho * D_g)`` is ``s`` expressed as an image-domain step.
    """
    rho = state.rho
    s = rho * state.zeta + (1.0 - rho) * state.v
    s_tilde = s / (rho * problem.data_curvature)
    state.mu = (prox or prox_sqs)(problem, state.mu, s_tilde, rho, n_inner)
    state.zeta = ls_gradient(problem, state.mu, subset)
    state.v = (rho * state.zeta + state.v) / (rho + 1.0)
    state.cursor += 1
    return state


def admm_iterate(problem: PWLSProblem, state: SolverState, n_iters: int, n_subsets: int = 1,
                 n_inner: int = 2, prox=None, log_to: IterationLog | None = None) -> SolverState:
    seq = _subset_sequence(problem, n_subsets)
    for _ in range(n_iters):
        for subset in seq:
            admm_step(problem, state, subset, n_inner, prox)
        state.iteration += 1
        if log_to is not None:
            log_to.record(problem, state.iteration, state.mu)
    return state


def admm_solve(problem: PWLSProblem, init, n_iters: int = 50, n_subsets: int = 20,
               rho: float = 0.5, n_inner: int = 2, log_to: IterationLog | None = None) -> np.ndarray:
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    init = np.asarray(init, dtype=np.float64)
    if np.any(init < 0):
        raise ValueError("initial image must be non-negative")
    state = SolverState.start(problem, init, rho)
    obj0 = objective(problem, init)
    if log_to is not None:
        log_to.record(problem, 0, state.mu)
    admm_iterate(problem, state, n_iters, n_subsets, n_inner, log_to=log_to)
    _check_divergence(obj0, objective(problem, state.mu), n_iters)
    return state.mu


def lbfgs_solve(problem: PWLSProblem, init, max_iter: int = 1000, tol: float = 0.0,
                log_to: IterationLog | None = None) -> np.ndarray:
    """Bound-constrained quasi-Newton solve, used to produce tightly converged references.

    Optimises over ``HU + 1000`` (= mu * HU_PER_MU) so variables and
    gradients are well scaled for L-BFGS-B.
    """
    shape = problem.grid.shape

    def fg(x):
        mu = (x / HU_PER_MU).reshape(shape)
        return objective(problem, mu), (total_gradient(problem, mu) / HU_PER_MU).ravel()

    x0 = np.maximum(np.asarray(init, dtype=np.float64), 0.0).ravel() * HU_PER_MU
    callback = None
    if log_to is not None:
        log_to.record(problem, 0, x0.reshape(shape) / HU_PER_MU)

        def callback(xk):
            log_to.record(problem, len(log_to.rows), xk.reshape(shape) / HU_PER_MU)

    res = scipy.optimize.minimize(
        fg, x0, jac=True, method="L-BFGS-B", bounds=[(0.0, None)] * x0.size, callback=callback,
        options=dict(maxiter=max_iter, maxfun=2 * max_iter, maxcor=20, ftol=tol, gtol=tol))
    log.debug("lbfgs: %s after %d evaluations", res.message, res.nfev)
    return np.maximum(res.x / HU_PER_MU, 0.0).reshape(shape)


def estimate_beta(problem: PWLSProblem, mu) -> float:
    """Median over positive pixels of ``-G_j / grad_j h``, which equals beta at a KKT point."""
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(mu < 0):
        raise ValueError("image must be non-negative")
    g = ls_gradient(problem, mu)
    gh_hu = problem.penalty.gradient(mu_to_hu(mu))
    keep = (mu > 0) & (np.abs(gh_hu) > EPS_H)
    if not np.any(keep):
        raise ValueError("penalty gradient vanishes on every positive pixel")
    return float(np.median(-g[keep] / (HU_PER_MU * gh_hu[keep])))


def ramp_filter(n_dets: int, det_spacing: float, window: str = "ramp") -> np.ndarray:
    """Frequency response on the zero-padded FFT grid (zero gain at DC).

    Padding to at least 8x the detector count keeps the DC offset that a
    zero-DC sampled ramp introduces below ~2 HU.
    """
    n_pad = 1 << int(np.ceil(np.log2(8 * n_dets)))
    f = np.fft.fftfreq(n_pad, d=det_spacing)
    h = np.abs(f)
    if window in ("hann", "hann-apodized"):
        h = h * 0.5 * (1.0 + np.cos(np.pi * f / f.max()))
    elif window != "ramp":
        raise ValueError(f"unknown filter {window!r}")
    return h


def fbp_reconstruct(sino, geom: ScanGeometry | None = None, window: str = "ramp") -> np.ndarray:
    """Parallel-beam filtered backprojection of the line integrals (mm^-1)."""
    if isinstance(sino, Sinogram):
        geom, l = sino.geom, sino.l
    else:
        l = np.asarray(sino, dtype=np.float64)
    if geom.beam_type != "parallel":
        raise NotImplementedError("FBP supports parallel-beam geometry only")
    h = ramp_filter(geom.n_dets, geom.det_spacing, window)
    padded = np.zeros((geom.n_views, h.size))
    padded[:, :geom.n_dets] = l
    q = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * h, axis=1))[:, :geom.n_dets]
    X, Y = geom.grid.meshgrid()
    u0 = geom.det_positions[0]
    img = np.zeros(geom.grid.shape)
    for v, theta in enumerate(geom.angles):
        u = X * np.cos(theta) + Y * np.sin(theta)
        f = (u - u0) / geom.det_spacing
        i0 = np.floor(f).astype(int)
        frac = f - i0
        for idx, wgt in ((i0, 1.0 - frac), (i0 + 1, frac)):
            ok = (idx >= 0) & (idx < geom.n_dets)
            img[ok] += wgt[ok] * q[v, idx[ok]]
    return img * np.pi / geom.n_views
