"""``pbir <command> --config <file> [--override key=value]... [--force]``."""

from __future__ import annotations

import argparse
import csv
import io as _io
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import io
from .config import ConfigError, ExperimentConfig, load_config
from .metrics import nps_peak_path
from .simulate import hu_to_mu, mu_to_hu
from .solvers import IterationLog, SolverDivergence, fbp_reconstruct

COMMANDS = ("phantom", "simulate", "recon", "path", "metrics", "nps")
log = logging.getLogger("pbir")


class CommandError(RuntimeError):
    pass


class Context:
    def __init__(self, cfg: ExperimentConfig, command: str, force: bool):
        self.cfg = cfg
        self.command = command
        self.force = force
        self.out = Path(cfg.output_dir)
        self.hash = cfg.config_hash()

    def header(self, unit="HU", seed=None, shape=None, **meta) -> io.ImageFileHeader:
        g = self.cfg.geometry.grid()
        ny, nx = shape if shape is not None else g.shape
        meta = {"command": self.command, "config_hash": self.hash,
                "seed": self.cfg.simulation.seed if seed is None else seed, **meta}
        return io.ImageFileHeader(nx, ny, g.dx, g.dy, unit, meta=meta)

    def claim(self, *names) -> list[Path]:
        paths = [self.out / n for n in names]
        for p in paths:
            io.check_writable(p, self.force)
        return paths

    def write_image(self, path: Path, hu, header=None):
        io.write_image(path, hu, header or self.header(), self.force)
        if self.cfg.export.pgm and (header is None or header.unit == "HU"):
            e = self.cfg.export
            io.write_bytes(path.with_suffix(".pgm"), io.to_pgm(hu, e.window, e.level), self.force)

    def write_csv(self, path: Path, header, rows):
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        io.write_bytes(path, buf.getvalue().encode(), self.force)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def cmd_phantom(ctx: Context):
    (out,) = ctx.claim("phantom.pbir")
    st = ex.setup(ctx.cfg)
    ctx.write_image(out, st.truth_hu)
    return [out]


def cmd_simulate(ctx: Context):
    (out,) = ctx.claim("sinogram.pbir")
    st = ex.setup(ctx.cfg)
    s = st.sino
    g = s.geom
    hdr = io.ImageFileHeader(g.n_dets, g.n_views, g.det_spacing, float(np.pi / g.n_views), "sinogram", 3,
                             meta={"command": ctx.command, "config_hash": ctx.hash,
                                   "seed": s.meta["seed"], "planes": ["counts", "l", "w"],
                                   "I0": s.I0, "n_clamped": s.meta["n_clamped"]})
    io.write_image(out, np.stack([s.counts, s.l, s.w]), hdr, ctx.force)
    return [out]


def cmd_recon(ctx: Context):
    alg = ctx.cfg.solver.algorithm
    names = [f"recon_{alg}.pbir"] + ([] if alg == "fbp" else [f"recon_{alg}_iterations.csv"])
    paths = ctx.claim(*names)
    st = ex.setup(ctx.cfg)
    if alg == "fbp":
        if st.sino.geom.beam_type != "parallel":
            raise CommandError("fbp supports parallel-beam geometry only")
        mu = fbp_reconstruct(st.sino, window=ctx.cfg.solver.window)
    else:
        logger = IterationLog(st.truth_hu)
        mu = ex.direct_solve(st.problem, ctx.cfg.solver.beta, ctx.cfg.solver,
                             ex.initial_image(st.sino, ctx.cfg.solver.window), logger)
        ctx.write_csv(paths[1], ["iteration", "objective", "rmsd_truth_hu"], logger.rows)
    ctx.write_image(paths[0], mu_to_hu(mu), ctx.header(beta=ctx.cfg.solver.beta, algorithm=alg))
    return paths


def _path_dir(ctx: Context, engine: str) -> Path:
    return ctx.out / f"path_{engine}"


def cmd_path(ctx: Context):
    engine = ctx.cfg.path.engine
    d = _path_dir(ctx, engine)
    (manifest,) = ctx.claim(f"path_{engine}/manifest.csv")
    stale = sorted(d.glob("frame_*.pbir")) if d.exists() else []
    if stale and not ctx.force:
        raise CommandError(f"{d} already holds frame files (use --force to overwrite)")
    st = ex.setup(ctx.cfg)
    path = ex.run_path(ctx.cfg, st, engine)
    for f in stale:
        f.unlink()
        f.with_suffix(".pgm").unlink(missing_ok=True)
    rows = []
    for fr in path.frames:
        name = f"frame_{fr.index:03d}.pbir"
        ctx.write_image(d / name, mu_to_hu(fr.image),
                        ctx.header(beta=fr.beta_assigned, frame=fr.index, engine=engine))
        rows.append((fr.index, name, fr.beta_assigned, fr.distance, fr.n_updated, fr.note))
    ctx.write_csv(manifest, ["frame", "file", "beta", "distance_hu", "n_updated", "note"], rows)
    log.info("%s path: %d frames (%s)", engine, len(path), path.provenance["termination"])
    return [manifest]


def _read_manifest(ctx: Context, engine: str):
    d = _path_dir(ctx, engine)
    mpath = d / "manifest.csv"
    if not mpath.is_file():
        raise CommandError(f"{mpath} not found (run 'pbir path' first)")
    with open(mpath, newline="") as f:
        rows = list(csv.DictReader(f))
    frames, betas = [], []
    for r in rows:
        arr, _ = io.read_image(d / r["file"], ctx.hash if ctx.cfg.metrics.strict else None)
        frames.append(arr)
        betas.append(float(r["beta"]))
    if not frames:
        raise CommandError(f"{mpath} lists no frames")
    return frames, betas


def cmd_metrics(ctx: Context):
    cfg = ctx.cfg
    engine = cfg.path.engine
    names = [f"metrics_{engine}/frames.csv", f"metrics_{engine}/closest.csv"]
    computed = not cfg.metrics.references
    betas = cfg.path_betas() if computed else (list(cfg.metrics.reference_betas)
                                               or [float("nan")] * len(cfg.metrics.references))
    if computed:
        names += [f"metrics_{engine}/reference_{j:02d}.pbir" for j in range(len(betas))]
    paths = ctx.claim(*names)
    frames_hu, frame_betas = _read_manifest(ctx, engine)
    frames = [hu_to_mu(f) for f in frames_hu]
    st = ex.setup(cfg)
    if computed:
        refs = ex.reference_solves(cfg, st, betas)
        for p, b, r in zip(paths[2:], betas, refs):
            ctx.write_image(p, mu_to_hu(r), ctx.header(beta=b, algorithm=cfg.solver.algorithm))
    else:
        refs = [hu_to_mu(io.read_image(p)[0]) for p in cfg.metrics.references]
    if any(r.shape != frames[0].shape for r in refs):
        raise CommandError("reference images do not match the path grid")
    roi = (st.truth_hu > -500) if cfg.metrics.roi == "support" else None
    ctx.write_csv(paths[0], ["frame", "frame_beta", "reference", "reference_beta", "rmsd_hu", "mad_hu"],
                  ex.comparison_rows(frames, frame_betas, refs, betas, roi))
    problem = st.problem if computed or cfg.metrics.reference_betas else None
    ctx.write_csv(paths[1], ["reference", "reference_beta", "closest_frame", "frame_beta",
                             "rmsd_hu", "mad_hu", "beta_estimate"],
                  ex.closest_rows(frames, frame_betas, refs, betas, problem, roi))
    return paths[:2]


def cmd_nps(ctx: Context):
    levels = ex.nps_levels(ctx.cfg)
    names = ["nps/radial.csv", "nps/summary.csv"] + [f"nps/spectrum_{j:02d}.pbir" for j in range(len(levels))]
    paths = ctx.claim(*names)
    levels, results, used = ex.nps_experiment(ctx.cfg)
    rows, summary = [], []
    for j, (b, r) in enumerate(zip(levels, results)):
        ny, nx = r.spectrum.shape
        hdr = io.ImageFileHeader(nx, ny, float(r.fx[1] - r.fx[0]), float(r.fy[1] - r.fy[0]), "HU2mm2",
                                 meta={"command": ctx.command, "config_hash": ctx.hash,
                                       "seed": ctx.cfg.simulation.seed, "beta_level": b,
                                       "n_realizations": r.n_realizations})
        io.write_image(paths[2 + j], r.spectrum, hdr, ctx.force)
        for f, v, vn in zip(r.radial_freq, r.radial_profile, r.normalized_profile):
            rows.append((j, b, f, v, vn))
        summary.append((j, b, float(np.exp(np.mean(np.log(used[:, j])))), r.peak_frequency,
                        r.integral(), r.n_realizations))
    peaks, violations = nps_peak_path(results)
    if violations:
        log.warning("NPS peak frequency increased %d time(s) along the path", violations)
    ctx.write_csv(paths[0], ["level", "beta", "frequency", "nps", "nps_normalized"], rows)
    ctx.write_csv(paths[1], ["level", "beta", "frame_beta_geomean", "peak_frequency", "variance_hu2",
                             "n_realizations"], summary)
    return paths


HANDLERS = {"phantom": cmd_phantom, "simulate": cmd_simulate, "recon": cmd_recon,
            "path": cmd_path, "metrics": cmd_metrics, "nps": cmd_nps}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pbir", description="PWLS reconstruction-path experiments")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="YAML experiment file")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="dotted key override, e.g. solver.beta=0.01 (repeatable)")
    ap.add_argument("--force", action="store_true", help="overwrite existing outputs")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.override)
        ctx = Context(cfg, args.command, args.force)
        for p in HANDLERS[args.command](ctx):
            print(p)
    except (ConfigError, CommandError, io.FormatError, FileExistsError, FileNotFoundError,
            SolverDivergence, ValueError, NotImplementedError) as e:
        print(f"pbir {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
