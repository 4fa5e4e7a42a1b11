"""Orchestration of single solves and parameter studies from a validated config."""
from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import direct
from .body_operator import OperatorCache
from .config import ConfigError, SceneConfig
from .field import (dirichlet_data, evaluate_field, exact_field, point_sources,
                    rel_inf_error, sphere_targets)
from .multibody import solve
from .report import RunReport, write_csv, write_field_samples
from .scenes import build_scene
from .skeleton import form_reduced_system, reconstruct_density, skeletonize_scene, solve_reduced

__all__ = ["run_solve", "run_study", "study_cells"]

log = logging.getLogger(__name__)


def run_solve(cfg: SceneConfig, cache: Optional[OperatorCache] = None, label: str = "solve",
              out_dir: Optional[Path] = None) -> RunReport:
    """Build the scene, solve, verify and (optionally) write the report files.

    The boundary data always comes from interior point sources placed with
    the verification seed; ``verification.enabled`` only controls whether
    the exterior field is compared with the known solution.
    """
    t_start = time.perf_counter()
    ver = cfg.verification
    comp = cfg.compression
    specs = cfg.body_specs()
    spec = cfg.kernel(specs)
    scene = build_scene(specs, spec, cache)
    rng = np.random.default_rng(ver["seed"])
    incident = point_sources(scene, rng)
    v = dirichlet_data(incident, scene)

    t_skel = N_c = ranks = None
    if comp["enabled"]:
        t0 = time.perf_counter()
        skels = skeletonize_scene(scene, comp["eps"], seed=ver["seed"], c_prox=comp["c_prox"],
                                  n_proxy=comp["n_proxy"])
        red = form_reduced_system(scene, skels)
        t_skel = time.perf_counter() - t0
        s, rep = solve_reduced(red, v, cfg.solver)
        t1 = time.perf_counter()
        sigma = reconstruct_density(red, s, v)
        rep.t_solve += time.perf_counter() - t1
        N_c, ranks = red.N_compressed, [sk.rank for sk in skels]
    else:
        sigma, rep = solve(scene, v, cfg.solver)

    err = margin = None
    degraded = False
    targets = None
    if ver["enabled"]:
        targets = sphere_targets(scene, ver["n_targets"], rng, ver["target_factor"], ver["margin"])
        u = evaluate_field(scene, sigma, targets)
        err = rel_inf_error(u, exact_field(incident, scene, targets))
        margin, degraded = targets.margin, targets.degraded

    report = RunReport(
        label=label, config=cfg.data, kernel=spec.as_dict(), N=scene.N,
        n=[b.grid.n for b in scene.bodies], m=scene.m, iterations=rep.iterations,
        residual_history=[float(h) for h in rep.history], residual_kind=rep.residual,
        converged=rep.converged, stagnated=rep.stagnated, preconditioned=rep.preconditioned,
        rel_inf_error=err, target_margin=margin, degraded_targets=degraded, N_compressed=N_c,
        ranks=ranks, eps=comp["eps"] if comp["enabled"] else None, t_pre=scene.t_pre,
        t_solve=rep.t_solve, t_skeleton=t_skel, t_total=time.perf_counter() - t_start,
        backend=direct.BACKEND, extra={"incident": incident.as_dict()})

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.save(out_dir / f"{label}.json")
        samples = cfg.output["field_samples"]
        if samples:
            pts = targets if targets is not None else sphere_targets(
                scene, ver["n_targets"], rng, ver["target_factor"], ver["margin"])
            write_field_samples(out_dir / f"{label}-{samples}", pts.points,
                                evaluate_field(scene, sigma, pts))
    log.info("%s: N=%d I=%d err=%s", label, report.N, report.iterations, err)
    return report


def study_cells(cfg: SceneConfig) -> list[tuple[str, SceneConfig]]:
    """Labelled configs for each cell of the study described in ``cfg``."""
    study = cfg.study
    if study is None:
        raise ConfigError("config has no study section")
    kind = study["kind"]
    if kind == "convergence":
        sweep = study.get("sweep") or []
        if not sweep:
            raise ConfigError("convergence study needs a non-empty sweep list")
        return [(f"res{i:02d}", cfg.with_resolution(r)) for i, r in enumerate(sweep)]
    if kind == "precond-compare":
        return [("precond", cfg.with_updates(solver={"precondition": True})),
                ("noprecond", cfg.with_updates(solver={"precondition": False}))]
    if kind == "compress-compare":
        return [("uncompressed", cfg.with_updates(compression={"enabled": False})),
                ("compressed", cfg.with_updates(compression={"enabled": True}))]
    raise ConfigError(f"unknown study kind {kind!r}")


def run_study(cfg: SceneConfig, cache: Optional[OperatorCache] = None,
              out_dir: Optional[Path] = None) -> list[RunReport]:
    """One report per cell plus a combined CSV table."""
    cells = study_cells(cfg)
    cache = cache if cache is not None else OperatorCache()
    reports = [run_solve(c, cache, label, out_dir) for label, c in cells]
    if out_dir is not None:
        write_csv(Path(out_dir) / cfg.output["csv"], reports)
    return reports
