"""Experiment protocols shared by the command line and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import solvers
from .config import ExperimentConfig, SolverBlock, geomspace
from .metrics import NPSResult, central_roi, mad, nps, rmsd
from .pathseek import ReconPath, closest_frame, ps_dog, ps_rog
from .simulate import Sinogram, hu_to_mu, rasterize, simulate_counts
from .solvers import IterationLog, PWLSProblem


@dataclass
class Setup:
    truth_hu: np.ndarray
    sino: Sinogram
    problem: PWLSProblem


def setup(cfg: ExperimentConfig, seed: int | None = None) -> Setup:
    geom = cfg.geometry.build()
    truth = rasterize(cfg.phantom.build(), geom.grid).values
    sim = cfg.simulation
    sino = simulate_counts(hu_to_mu(truth), geom, sim.I0, sim.seed if seed is None else seed, sim.noiseless)
    problem = PWLSProblem.from_sinogram(sino, cfg.penalty.build(), cfg.solver.beta)
    return Setup(truth, sino, problem)


def initial_image(sino: Sinogram, window: str = "ramp") -> np.ndarray:
    """Non-negative FBP start image; fan-beam data start from zero."""
    if sino.geom.beam_type != "parallel":
        return np.zeros(sino.geom.grid.shape)
    return np.maximum(solvers.fbp_reconstruct(sino, window=window), 0.0)


def direct_solve(problem: PWLSProblem, beta: float, solver: SolverBlock, init,
                 log_to: IterationLog | None = None) -> np.ndarray:
    """Iterative solve at ``beta`` with the configured algorithm (FBP is not a PWLS solve)."""
    pb = problem.with_beta(beta)
    if solver.algorithm == "sqs":
        return solvers.sqs_solve(pb, init, solver.n_iters, solver.n_subsets, log_to)
    if solver.algorithm == "admm":
        return solvers.admm_solve(pb, init, solver.n_iters, solver.n_subsets, solver.rho,
                                  solver.n_inner, log_to)
    if solver.algorithm == "lbfgs":
        return solvers.lbfgs_solve(pb, init, solver.n_iters, log_to=log_to)
    raise ValueError(f"{solver.algorithm} cannot produce a PWLS solution")


def run_path(cfg: ExperimentConfig, st: Setup, engine: str | None = None) -> ReconPath:
    engine = engine or cfg.path.engine
    pc = cfg.path.build()
    x0 = initial_image(st.sino, cfg.solver.window)
    mu1 = direct_solve(st.problem, pc.beta1, cfg.solver, x0)
    if engine == "dog":
        return ps_dog(st.problem, mu1, pc)
    mu2 = mu1 if pc.beta2 == pc.beta1 else direct_solve(st.problem, pc.beta2, cfg.solver, x0)
    if pc.direction == "decreasing":
        return ps_rog(st.problem, mu2, mu1, pc)
    return ps_rog(st.problem, mu1, mu2, pc)


def reference_solves(cfg: ExperimentConfig, st: Setup, betas) -> list[np.ndarray]:
    x0 = initial_image(st.sino, cfg.solver.window)
    return [direct_solve(st.problem, b, cfg.solver, x0) for b in betas]


def frame_for_beta(path: ReconPath, beta: float) -> int:
    """Frame whose assigned beta is closest to ``beta`` on a log scale (first on ties)."""
    b = np.maximum(path.betas, 1e-300)
    return int(np.argmin(np.abs(np.log(b) - np.log(beta))))


def comparison_rows(frames, frame_betas, refs, ref_betas, roi=None):
    """Per (frame, reference) RMSD and MAD in HU."""
    rows = []
    for i, (img, fb) in enumerate(zip(frames, frame_betas)):
        for j, (ref, rb) in enumerate(zip(refs, ref_betas)):
            rows.append((i, fb, j, rb, rmsd(img, ref, roi), mad(img, ref, roi)))
    return rows


def closest_rows(frames, frame_betas, refs, ref_betas, problem: PWLSProblem | None = None, roi=None):
    """For each reference: closest frame, its RMSD/MAD and (optionally) the KKT beta estimate."""
    rows = []
    for j, (ref, rb) in enumerate(zip(refs, ref_betas)):
        i, r = closest_frame(frames, ref) if roi is None else min(
            ((k, rmsd(f, ref, roi)) for k, f in enumerate(frames)), key=lambda t: (t[1], t[0]))
        est = float("nan")
        if problem is not None:
            try:
                est = solvers.estimate_beta(problem.with_beta(rb), ref)
            except ValueError:
                pass
        rows.append((j, rb, i, frame_betas[i], r, mad(frames[i], ref, roi), est))
    return rows


def nps_levels(cfg: ExperimentConfig) -> list[float]:
    if cfg.nps.betas:
        return list(cfg.nps.betas)
    return geomspace(cfg.path.beta1, cfg.path.beta2, cfg.nps.n_levels)


def nps_experiment(cfg: ExperimentConfig) -> tuple[list[float], list[NPSResult], np.ndarray]:
    """Path-frame NPS over ``n_seeds`` noise realizations.

    Returns the target beta levels, one ``NPSResult`` per level and the
    (n_seeds, n_levels) array of assigned betas of the frames actually used.
    """
    levels = nps_levels(cfg)
    picked = [[] for _ in levels]
    used = np.zeros((cfg.nps.n_seeds, len(levels)))
    for k in range(cfg.nps.n_seeds):
        st = setup(cfg, cfg.simulation.seed + k)
        path = run_path(cfg, st)
        for j, b in enumerate(levels):
            i = frame_for_beta(path, b)
            picked[j].append(path.frames[i].image)
            used[k, j] = path.frames[i].beta_assigned
    g = cfg.geometry.grid()
    roi = central_roi(g.shape, cfg.nps.roi_fraction)
    results = [nps(imgs, roi, g.dx, g.dy, cfg.nps.n_bins, cfg.nps.mode) for imgs in picked]
    return levels, results, used
