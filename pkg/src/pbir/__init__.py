"""Reconstruction-path seeking for penalized weighted least-squares CT."""

from .geometry import ImageGrid, Projector, ScanGeometry, SubsetScheme, make_subsets
from .metrics import NPSResult, mad, nps, nps_peak_path, rmsd
from .pathseek import PathConfig, PathFrame, ReconPath, closest_frame, ps_dog, ps_rog, ps_rog_reverse
from .penalty import HuberPenalty
from .simulate import EllipsePhantom, ImageVolume, Sinogram, hu_to_mu, mu_to_hu, rasterize, simulate_counts
from .solvers import PWLSProblem, admm_solve, estimate_beta, fbp_reconstruct, lbfgs_solve, sqs_solve

__version__ = "0.1.0"
