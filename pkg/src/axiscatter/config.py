"""JSON scene configuration: schema validation, defaults and conversion to scene objects."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .geometry import GeometryError, RigidMotion, shape_catalog
from .kernels import KernelSpec
from .multibody import GmresConfig
from .scenes import BodySpec, Resolution, layout_for_gap

__all__ = ["ConfigError", "SceneConfig", "load_config", "parse_config", "DEFAULTS", "schema"]


class ConfigError(ValueError):
    """Schema violation or inconsistent settings."""


DEFAULTS = {
    "solver": {"tol": 1e-9, "max_iter": 500, "restart": None, "precondition": True},
    "compression": {"enabled": False, "eps": 1e-10, "c_prox": 1.75, "n_proxy": None},
    "verification": {"enabled": True, "seed": 0, "n_targets": 10, "target_factor": 3.0,
                     "margin": None},
    "output": {"report": "report.json", "csv": "results.csv", "field_samples": None},
}
BODY_DEFAULTS = {"params": {}, "r_panels": 10, "gauss_order": 10, "n_fourier": 41, "grading": None}


def schema() -> dict:
    return json.loads(resources.files("axiscatter").joinpath("schemas/config.schema.json").read_text())


@dataclass(frozen=True)
class SceneConfig:
    """Validated configuration with every default filled in."""

    raw: dict

    @property
    def data(self) -> dict:
        return copy.deepcopy(self.raw)

    @property
    def equation(self) -> str:
        return self.raw["equation"]

    @property
    def solver(self) -> GmresConfig:
        s = self.raw["solver"]
        return GmresConfig(s["tol"], s["max_iter"], s["restart"], s["precondition"])

    @property
    def compression(self) -> dict:
        return self.raw["compression"]

    @property
    def verification(self) -> dict:
        return self.raw["verification"]

    @property
    def output(self) -> dict:
        return self.raw["output"]

    @property
    def study(self) -> Optional[dict]:
        return self.raw.get("study")

    def with_updates(self, **sections) -> "SceneConfig":
        d = self.data
        for key, val in sections.items():
            if isinstance(val, dict) and isinstance(d.get(key), dict):
                d[key].update(val)
            else:
                d[key] = val
        return SceneConfig(d)

    def with_resolution(self, res: dict) -> "SceneConfig":
        d = self.data
        targets = d["bodies"] if "bodies" in d else [d["lattice"]["body"]]
        for b in targets:
            b.update(res)
        return SceneConfig(d)

    # -- scene construction -------------------------------------------------
    def _curve(self, b: dict):
        try:
            return shape_catalog(b["shape"], b["params"])
        except (GeometryError, TypeError) as exc:
            raise ConfigError(f"body shape {b['shape']!r}: {exc}") from exc

    @staticmethod
    def _resolution(b: dict) -> Resolution:
        return Resolution(b["r_panels"], b["gauss_order"], b["n_fourier"], b["grading"])

    def body_specs(self) -> list[BodySpec]:
        d = self.raw
        if "bodies" in d:
            out = []
            for b in d["bodies"]:
                out.append(BodySpec(self._curve(b), _motion(b.get("motion", {})), self._resolution(b)))
            return out
        lat = d["lattice"]
        b = lat["body"]
        curve = self._curve(b)
        rng = np.random.default_rng(lat.get("seed", d["verification"]["seed"]))
        motions = layout_for_gap([curve] * lat["count"], lat["gap"], rng, lat.get("dims"),
                                 lat.get("random_orientation", True))
        return [BodySpec(curve, m, self._resolution(b)) for m in motions]

    def kernel(self, bodies: Optional[list[BodySpec]] = None) -> KernelSpec:
        d = self.raw
        coupling = complex(*d["coupling"]) if "coupling" in d else None
        if d["equation"] == "laplace":
            if "kappa" in d or "wavelengths" in d:
                raise ConfigError("laplace takes no wave number")
            return KernelSpec.laplace(1.0 if coupling is None else coupling)
        if "kappa" in d and "wavelengths" in d:
            raise ConfigError("give either kappa or wavelengths, not both")
        if "kappa" in d:
            return KernelSpec.helmholtz(float(d["kappa"]), coupling)
        if "wavelengths" not in d:
            raise ConfigError("helmholtz needs kappa or wavelengths")
        bodies = bodies if bodies is not None else self.body_specs()
        diam = 2 * max(b.curve.circumradius() for b in bodies)
        return KernelSpec.helmholtz(2 * np.pi * d["wavelengths"] / diam, coupling)


def _motion(m: dict) -> RigidMotion:
    t = tuple(m.get("translation", (0.0, 0.0, 0.0)))
    if "quaternion" in m:
        if "axis" in m or "angle" in m:
            raise ConfigError("motion takes a quaternion or an axis/angle pair, not both")
        q = np.asarray(m["quaternion"], float)
        if not np.isclose(np.linalg.norm(q), 1.0, atol=1e-9):
            raise ConfigError("motion quaternion must have unit norm")
        return RigidMotion(tuple(q), t)
    if "axis" in m or "angle" in m:
        return RigidMotion.from_axis_angle(m.get("axis", (0, 0, 1)), m.get("angle", 0.0), t)
    return RigidMotion((0.0, 0.0, 0.0, 1.0), t)


def parse_config(data: dict) -> SceneConfig:
    """Validate against the schema and fill defaults."""
    try:
        jsonschema.validate(data, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from exc
    d = copy.deepcopy(data)
    for key, defaults in DEFAULTS.items():
        d[key] = {**defaults, **d.get(key, {})}
    if "bodies" in d:
        d["bodies"] = [{**BODY_DEFAULTS, **b} for b in d["bodies"]]
    else:
        d["lattice"]["body"] = {**BODY_DEFAULTS, **d["lattice"]["body"]}
    study = d.get("study")
    if study is not None and study["kind"] == "convergence" and not study.get("sweep"):
        raise ConfigError("convergence study needs a non-empty sweep list")
    cfg = SceneConfig(d)
    for b in (d["bodies"] if "bodies" in d else [d["lattice"]["body"]]):
        if b["n_fourier"] % 2 == 0:
            raise ConfigError("n_fourier must be odd")
        cfg._curve(b)
    return cfg


def load_config(path) -> SceneConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data)
