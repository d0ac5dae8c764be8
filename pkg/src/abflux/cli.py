"""Scenario runner: ``abflux run | validate | list-scenarios``.

A scenario is a YAML document with a ``schema_version``, a task name, a
domain, one or two potentials, task parameters and optional tolerances.
Unknown keys are rejected. Reports are written as ``report.json`` plus CSV
tables; with ``--no-timings`` the report is byte-for-byte reproducible.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import warnings
from importlib import resources
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError, model_validator

from . import fields as F
from . import gauge as G
from . import geometry as geo
from . import schrodinger as S
from . import transport as TR
from .errors import AbfluxError, ConfigInvalid, InvalidGeometry, InvalidScenario

SCHEMA_VERSION = 1
EXIT_PASS, EXIT_ERROR, EXIT_TOLERANCE = 0, 1, 2

Vec2 = Tuple[float, float]


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --------------------------------------------------------------------------
# schema: geometry


class DiskCfg(Strict):
    center: Vec2 = (0.0, 0.0)
    radius: PositiveFloat


class RectCfg(Strict):
    lo: Vec2
    hi: Vec2


class PolygonCfg(Strict):
    vertices: List[Vec2]


class OuterCfg(Strict):
    disk: Optional[DiskCfg] = None
    rect: Optional[RectCfg] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.disk is None) == (self.rect is None):
            raise ValueError("outer region needs exactly one of 'disk' or 'rect'")
        return self


class ShapeCfg(Strict):
    disk: Optional[DiskCfg] = None
    polygon: Optional[PolygonCfg] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.disk is None) == (self.polygon is None):
            raise ValueError("obstacle shape needs exactly one of 'disk' or 'polygon'")
        return self


class ObstacleCfg(Strict):
    shape: ShapeCfg
    velocity: Vec2 = (0.0, 0.0)


class DomainCfg(Strict):
    outer: OuterCfg
    obstacles: List[ObstacleCfg] = []
    T: PositiveFloat = 1.0


# --------------------------------------------------------------------------
# schema: potentials and gauges


class VortexCfg(Strict):
    kind: Literal["vortex"]
    flux: float
    center: Vec2 = (0.0, 0.0)
    velocity: Vec2 = (0.0, 0.0)
    core: Optional[PositiveFloat] = None


class GaussianCfg(Strict):
    kind: Literal["gaussian-bump"]
    amplitude: Vec2 = (0.0, 0.0)
    v_amplitude: float = 0.0
    center: Vec2 = (0.0, 0.0)
    width: PositiveFloat = 1.0
    omega: float = 0.0
    phase: float = 0.0


class TermCfg(Strict):
    coef: float = 1.0
    powers: Optional[Tuple[int, int, int]] = None
    trig: Optional[Literal["sin", "cos"]] = None
    k: Optional[Tuple[float, float, float]] = None
    phase: float = 0.0

    @model_validator(mode="after")
    def _form(self):
        if (self.powers is None) == (self.trig is None):
            raise ValueError("a term needs exactly one of 'powers' or 'trig'")
        if self.trig is not None and self.k is None:
            raise ValueError("trigonometric terms need 'k'")
        return self

    def as_dict(self):
        if self.powers is not None:
            return {"coef": self.coef, "powers": list(self.powers)}
        return {"coef": self.coef, "trig": self.trig, "k": list(self.k), "phase": self.phase}


class TermsCfg(Strict):
    kind: Literal["terms"]
    A1: List[TermCfg] = []
    A2: List[TermCfg] = []
    V: List[TermCfg] = []
    support_radius: Optional[float] = None


class ProfileCfg(Strict):
    before: float
    after: float
    t1: float
    eps: PositiveFloat


class ShieldedCfg(Strict):
    kind: Literal["shielded-electric", "shielded-magnetic"]
    profile: ProfileCfg
    v0: float
    r1: PositiveFloat
    delta: PositiveFloat


class MatrixTermCfg(Strict):
    center: Vec2 = (0.0, 0.0)
    width: PositiveFloat = 1.0
    profile: Literal["bump", "gaussian"] = "bump"
    A1: Optional[Dict[Literal["I", "x", "y", "z"], float]] = None
    A2: Optional[Dict[Literal["I", "x", "y", "z"], float]] = None
    V: Optional[Dict[Literal["I", "x", "y", "z"], float]] = None


class MatrixBumpCfg(Strict):
    kind: Literal["matrix-bump"]
    terms: List[MatrixTermCfg]


class ZeroCfg(Strict):
    kind: Literal["zero"]


PotentialCfg = Annotated[
    Union[VortexCfg, GaussianCfg, TermsCfg, ShieldedCfg, MatrixBumpCfg, ZeroCfg],
    Field(discriminator="kind"),
]


class PhaseCfg(Strict):
    kind: Literal["bump", "gaussian"]
    amp: float
    center: Vec2 = (0.0, 0.0)
    width: PositiveFloat = 1.0
    omega: float = 0.0
    phase: float = 0.0


class GaugeCfg(Strict):
    psi: Optional[PhaseCfg] = None
    windings: List[int] = []


class MatrixGaugeCfg(Strict):
    generator: Literal["x", "y", "z"] = "z"
    center: Vec2 = (0.0, 0.0)
    width: PositiveFloat = 0.5
    amp: float = 1.0


# --------------------------------------------------------------------------
# schema: task parameters


class RayFamilyCfg(Strict):
    kind: Literal["parallel", "random"] = "parallel"
    count: int = Field(default=8, ge=0)
    times: List[float] = [0.0]
    angles: List[float] = [0.0]
    span: float = Field(default=0.9, gt=0, le=1)


class HolonomyParams(Strict):
    t: float = 0.0
    clearance: PositiveFloat = 0.5
    n_vertices: int = Field(default=128, ge=8)
    expected: Vec2 = (1.0, 0.0)
    flux_sweep: List[float] = []


class TraceParams(Strict):
    rays: RayFamilyCfg = RayFamilyCfg()
    max_reflections: int = Field(default=64, ge=0)
    tangency_tol: PositiveFloat = 1e-6


class TransformParams(TraceParams):
    gauge: Optional[GaugeCfg] = None


class EquivalenceParams(Strict):
    t_samples: int = Field(default=16, ge=1)
    clearance: PositiveFloat = 0.25
    tol_h: PositiveFloat = 1e-6
    n_targets: int = Field(default=10, ge=0)
    expect: Optional[Literal["equivalent", "inequivalent"]] = None
    gauge: Optional[GaugeCfg] = None


class RadonParams(Strict):
    offsets: List[float] = [0.0]
    angle: float = 0.0
    t: float = 0.0
    h: PositiveFloat = 1e-3
    gauge: Optional[MatrixGaugeCfg] = None


class BoundaryCfg(Strict):
    kind: Literal["zero", "cos2"] = "cos2"
    amplitude: float = 1.0
    omega: float = 2.0


class GridCfg(Strict):
    n: int = Field(default=48, ge=16)
    dt: PositiveFloat = 1e-3


class PDEParams(Strict):
    grid: GridCfg = GridCfg()
    boundary: BoundaryCfg = BoundaryCfg()
    gauge: Optional[GaugeCfg] = None


class ShieldedParams(Strict):
    x10: List[float] = [1.5, 2.0, 2.5]
    times: List[float] = [1.0, 2.3]
    box_half: PositiveFloat = 0.5
    loop_clearance: PositiveFloat = 0.3


TASK_PARAMS = {
    "holonomy": HolonomyParams,
    "trace-rays": TraceParams,
    "ray-transforms": TransformParams,
    "equivalence": EquivalenceParams,
    "nonabelian-radon": RadonParams,
    "schrodinger-boundary-data": PDEParams,
    "dtn": PDEParams,
    "shielded-demo": ShieldedParams,
}

TASK_TOLERANCES = {
    "holonomy": {"holonomy_defect"},
    "trace-rays": set(),
    "ray-transforms": {"mag_defect", "elec"},
    "equivalence": {"roundtrip"},
    "nonabelian-radon": {"gauge_invariance", "unitarity"},
    "schrodinger-boundary-data": {"gauge_discrepancy"},
    "dtn": {"gauge_discrepancy"},
    "shielded-demo": {"relative_flux"},
}


class Scenario(Strict):
    schema_version: Literal[1]
    name: str
    description: str = ""
    task: Literal[tuple(TASK_PARAMS)]
    seed: int = 0
    domain: Optional[DomainCfg] = None
    potentials: List[PotentialCfg] = []
    params: dict = {}
    tolerances: Dict[str, float] = {}

    @model_validator(mode="after")
    def _task_fields(self):
        # params are checked by load_scenario so error paths keep their prefix
        unknown = set(self.tolerances) - TASK_TOLERANCES[self.task]
        if unknown:
            raise ValueError(f"unknown tolerance(s) {sorted(unknown)} for task {self.task}")
        if self.task not in ("shielded-demo", "nonabelian-radon") and self.domain is None:
            raise ValueError(f"task {self.task} needs a domain")
        if self.task in ("holonomy", "ray-transforms", "equivalence", "nonabelian-radon",
                         "schrodinger-boundary-data", "dtn", "shielded-demo") and not self.potentials:
            raise ValueError(f"task {self.task} needs at least one potential")
        if len(self.potentials) > 2:
            raise ValueError("at most two potentials")
        return self

    @property
    def task_params(self):
        return TASK_PARAMS[self.task].model_validate(self.params)


# --------------------------------------------------------------------------
# loading


def builtin_names():
    folder = resources.files("abflux") / "scenarios"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".yaml"))


def _read_source(source):
    path = Path(source)
    if path.exists():
        return path.read_text()
    if source in builtin_names():
        return (resources.files("abflux") / "scenarios" / f"{source}.yaml").read_text()
    raise ConfigInvalid(f"no such config file or built-in scenario: {source}")


def _set_path(tree, dotted, value):
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        if isinstance(node, list):
            node = node[int(k)]
        else:
            node = node.setdefault(k, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def apply_overrides(raw, overrides):
    for item in overrides or ():
        if "=" not in item:
            raise ConfigInvalid(f"override must look like key=value: {item!r}")
        key, text = item.split("=", 1)
        try:
            _set_path(raw, key.strip(), yaml.safe_load(text))
        except (IndexError, ValueError, TypeError, AttributeError) as exc:
            raise ConfigInvalid(f"cannot apply override {item!r}: {exc}", path=key.split(".")) from exc
    return raw


def _first_error_path(err: ValidationError, prefix=()):
    e = err.errors()[0]
    return tuple(prefix) + tuple(str(p) for p in e["loc"]), e["msg"]


def load_scenario(source, overrides=()) -> Scenario:
    """Parse, override and validate a scenario; raises ConfigInvalid."""
    try:
        raw = yaml.safe_load(_read_source(source))
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"YAML parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a mapping")
    raw = apply_overrides(raw, overrides)
    try:
        sc = Scenario.model_validate(raw)
    except ValidationError as err:
        path, msg = _first_error_path(err)
        raise ConfigInvalid(msg, path=path) from None
    try:
        sc.task_params
    except ValidationError as err:
        path, msg = _first_error_path(err, ("params",))
        raise ConfigInvalid(msg, path=path) from None
    return sc


# --------------------------------------------------------------------------
# builders


def build_domain(cfg: DomainCfg, validate=True) -> geo.Domain:
    if cfg.outer.disk is not None:
        outer = geo.OuterDisk(cfg.outer.disk.center, cfg.outer.disk.radius)
    else:
        outer = geo.OuterRect(cfg.outer.rect.lo, cfg.outer.rect.hi)
    obstacles = []
    for ob in cfg.obstacles:
        if ob.shape.disk is not None:
            shape = geo.Disk(ob.shape.disk.center, ob.shape.disk.radius)
        else:
            shape = geo.ConvexPolygon(np.array(ob.shape.polygon.vertices, dtype=float))
        motion = geo.Translation.linear(ob.velocity) if any(ob.velocity) else geo.STATIC
        obstacles.append(geo.Obstacle(shape, motion))
    return geo.Domain(outer, obstacles, (0.0, cfg.T), validate=validate)


def build_potential(cfg, T=4.0):
    if cfg.kind == "vortex":
        return F.vortex_potential(cfg.flux, cfg.center, cfg.velocity, cfg.core)
    if cfg.kind == "gaussian-bump":
        return F.gaussian_bump_potential(cfg.amplitude, cfg.v_amplitude, cfg.center, cfg.width,
                                         cfg.omega, cfg.phase)
    if cfg.kind == "terms":
        return F.term_potential([t.as_dict() for t in cfg.A1], [t.as_dict() for t in cfg.A2],
                                [t.as_dict() for t in cfg.V],
                                np.inf if cfg.support_radius is None else cfg.support_radius)
    if cfg.kind in ("shielded-electric", "shielded-magnetic"):
        return build_shielded(cfg, T)[0]
    if cfg.kind == "matrix-bump":
        return F.matrix_bump_potential([t.model_dump() for t in cfg.terms])
    return F.zero_potential()


def build_shielded(cfg: ShieldedCfg, T=4.0, outer_radius=5.0):
    prof = F.SmoothStepProfile(cfg.profile.before, cfg.profile.after, cfg.profile.t1, cfg.profile.eps)
    kind = "electric" if cfg.kind == "shielded-electric" else "magnetic"
    return F.build_shielded_scenario(kind, prof, cfg.v0, cfg.r1, cfg.delta, outer_radius, T)


def build_gauge(cfg: Optional[GaugeCfg], domain):
    if cfg is None:
        return None
    psi = None
    if cfg.psi is not None:
        cls = G.BumpPhase if cfg.psi.kind == "bump" else G.GaussianPhase
        psi = cls(cfg.psi.amp, tuple(cfg.psi.center), cfg.psi.width, cfg.psi.omega, cfg.psi.phase)
    return G.PhaseGauge(psi, tuple(cfg.windings), domain if any(cfg.windings) else None)


def ray_family(cfg: RayFamilyCfg, domain: geo.Domain, rng, max_reflections, tangency_tol):
    """Rays entering from outside the outer region; rejected rays keep their reason."""
    outer = domain.outer
    if isinstance(outer, geo.OuterDisk):
        c, R = outer.center, outer.radius
    else:
        c = 0.5 * (outer.lo + outer.hi)
        R = 0.5 * float(np.linalg.norm(outer.hi - outer.lo))
    specs = []
    if cfg.kind == "parallel":
        offsets = np.linspace(-cfg.span * R, cfg.span * R, cfg.count) if cfg.count else []
        for t in cfg.times:
            for a in cfg.angles:
                for off in offsets:
                    specs.append((float(t), float(a), float(off)))
    else:
        for _ in range(cfg.count):
            specs.append((float(rng.choice(cfg.times)), float(rng.uniform(0, 2 * np.pi)),
                          float(rng.uniform(-cfg.span * R, cfg.span * R))))
    out = []
    for t, a, off in specs:
        w = np.array([np.cos(a), np.sin(a)])
        perp = np.array([-w[1], w[0]])
        origin = c - (R + 1.0) * w + off * perp
        try:
            ray = geo.trace_broken_ray(origin, w, t, domain, max_reflections, tangency_tol)
            out.append(((t, a, off), ray, ""))
        except AbfluxError as exc:
            out.append(((t, a, off), None, f"{type(exc).__name__}: {exc}"))
    return out


# --------------------------------------------------------------------------
# tasks


class Result:
    def __init__(self):
        self.summary = {}
        self.tables = {}
        self.checks = []

    def table(self, name, header, rows):
        self.tables[name] = (header, rows)

    def check(self, name, value, tolerance, relation="<="):
        value = float(value)
        ok = value <= tolerance if relation == "<=" else value == tolerance
        self.checks.append({"name": name, "value": value, "tolerance": tolerance, "pass": bool(ok)})


def _tol(sc, name, default=None):
    return sc.tolerances.get(name, default)


def task_holonomy(sc, res):
    prm = sc.task_params
    domain = build_domain(sc.domain)
    p = build_potential(sc.potentials[0], domain.T)
    expected = complex(*prm.expected)
    rows = []
    worst = 0.0
    for j, loop in enumerate(geo.generator_loops(domain, prm.t, prm.clearance, prm.n_vertices)):
        R = G.holonomy(p, F.SpacetimePath.spatial(loop, prm.t, closed=True))
        worst = max(worst, abs(R - expected))
        rows.append([j, prm.t, R.real, R.imag, abs(R - expected)])
    res.table("holonomy", ["obstacle", "t", "re_R", "im_R", "defect"], rows)
    if prm.flux_sweep:
        cfg = sc.potentials[0]
        if cfg.kind != "vortex":
            raise InvalidScenario("flux_sweep needs a vortex potential")
        loop = F.SpacetimePath.spatial(geo.generator_loops(domain, prm.t, prm.clearance, prm.n_vertices)[0],
                                       prm.t, closed=True)
        curve = []
        for flux in prm.flux_sweep:
            R = G.holonomy(F.vortex_potential(flux, cfg.center, cfg.velocity, cfg.core), loop)
            curve.append([flux, R.real, R.imag, float(np.angle(R))])
        res.table("holonomy_vs_flux", ["flux", "re_R", "im_R", "arg_R"], curve)
    res.summary["max_defect"] = worst
    if "holonomy_defect" in sc.tolerances:
        res.check("holonomy_defect", worst, _tol(sc, "holonomy_defect"))


def _ray_rows(rays):
    rows, polylines = [], []
    for k, ((t, a, off), ray, err) in enumerate(rays):
        if ray is None:
            rows.append([k, t, a, off, "rejected", -1, float("nan"), float("nan"), float("nan"), err])
            continue
        ex = ray.exit_point
        rows.append([k, t, a, off, "ok", ray.n_reflections, ray.total_length, ex[0], ex[1], ""])
        pts = [ray.legs[0].start] + [leg.end for leg in ray.legs]
        polylines += [[k, i, p[0], p[1], t] for i, p in enumerate(pts)]
    return rows, polylines


def task_trace_rays(sc, res):
    prm = sc.task_params
    domain = build_domain(sc.domain)
    rays = ray_family(prm.rays, domain, np.random.default_rng(sc.seed), prm.max_reflections, prm.tangency_tol)
    rows, polylines = _ray_rows(rays)
    res.table("rays", ["ray_id", "t0", "angle", "offset", "status", "n_reflections", "length",
                       "exit_x1", "exit_x2", "reason"], rows)
    res.table("ray_polylines", ["ray_id", "vertex", "x1", "x2", "t0"], polylines)
    res.summary["n_rays"] = len(rows)
    res.summary["n_rejected"] = sum(1 for r in rows if r[4] != "ok")
    res.summary["n_reflecting"] = sum(1 for r in rows if r[4] == "ok" and r[5] > 0)


def task_ray_transforms(sc, res):
    prm = sc.task_params
    domain = build_domain(sc.domain)
    p_a = build_potential(sc.potentials[0], domain.T)
    gauge = build_gauge(prm.gauge, domain)
    if len(sc.potentials) > 1:
        p_b = build_potential(sc.potentials[1], domain.T)
    elif gauge is not None:
        p_b = G.apply_gauge(p_a, gauge)
    else:
        p_b = p_a
    rays = ray_family(prm.rays, domain, np.random.default_rng(sc.seed), prm.max_reflections, prm.tangency_tol)
    good = [r for _, r, err in rays if r is not None]
    rep = TR.transform_dataset(p_a, p_b, good, gauge=gauge)
    res.table("transforms", ["ray_id", "t0", "x1", "x2", "angle", "n_reflections", "dmag", "delec",
                             "mag_defect"],
              [[r.ray_id, r.t0, r.x1, r.x2, r.angle, r.n_reflections, r.dmag, r.delec, r.mag_defect]
               for r in rep.rows])
    res.summary.update(rep.to_dict())
    res.summary["n_rejected"] = len(rays) - len(good)
    if "mag_defect" in sc.tolerances:
        res.check("mag_defect", rep.max_mag_defect, _tol(sc, "mag_defect"))
    if "elec" in sc.tolerances:
        res.check("elec", rep.max_elec, _tol(sc, "elec"))


def _random_targets(domain, rng, n, margin=0.2):
    outer = domain.outer
    if isinstance(outer, geo.OuterDisk):
        lo, hi = outer.center - outer.radius, outer.center + outer.radius
    else:
        lo, hi = outer.lo, outer.hi
    out = []
    while len(out) < n:
        x = rng.uniform(lo, hi)
        t = float(rng.uniform(0, domain.T))
        if domain.contains(x[None], t, margin=margin)[0]:
            out.append([x[0], x[1], t])
    return np.array(out).reshape(-1, 3)


def task_equivalence(sc, res):
    prm = sc.task_params
    domain = build_domain(sc.domain)
    p_a = build_potential(sc.potentials[0], domain.T)
    gauge = build_gauge(prm.gauge, domain)
    if len(sc.potentials) > 1:
        p_b = build_potential(sc.potentials[1], domain.T)
    else:
        p_b = G.apply_gauge(p_a, gauge) if gauge is not None else p_a
    ts = np.linspace(0.0, domain.T, prm.t_samples)
    verdict = G.test_gauge_equivalence(p_a, p_b, domain, ts, prm.clearance, prm.tol_h)
    res.table("loops", ["label", "re_R", "im_R", "defect"],
              [[l.label, l.value.real, l.value.imag, abs(l.value - 1)] for l in verdict.loops])
    samples = None
    if verdict.equivalent and prm.n_targets:
        targets = _random_targets(domain, np.random.default_rng(sc.seed), prm.n_targets)
        values = verdict.gauge.values(targets)
        samples = [[*t, v] for t, v in zip(targets, values)]
        res.table("c_samples", ["x1", "x2", "t", "re_c", "im_c"],
                  [[t[0], t[1], t[2], v.real, v.imag] for t, v in zip(targets, values)])
        if gauge is not None and len(sc.potentials) == 1:
            base_x, base_t = verdict.gauge.base
            ref = gauge(targets[:, :2], targets[:, 2]) / gauge(base_x[None], base_t)[0]
            err = float(np.max(np.abs(values - ref)))
            res.summary["roundtrip_error"] = err
            if "roundtrip" in sc.tolerances:
                res.check("roundtrip", err, _tol(sc, "roundtrip"))
    res.summary["verdict"] = verdict.to_dict(samples)
    if prm.expect is not None:
        got = "equivalent" if verdict.equivalent else "inequivalent"
        res.checks.append({"name": "verdict", "value": got, "tolerance": prm.expect, "pass": got == prm.expect})


def task_radon(sc, res):
    prm = sc.task_params
    p = build_potential(sc.potentials[0])
    mats = TR.nonabelian_radon(p, prm.offsets, prm.angle, prm.t, prm.h)
    rows = []
    worst_u = 0.0
    for y, c in zip(prm.offsets, mats):
        u = float(np.linalg.norm(c.conj().T @ c - np.eye(len(c))))
        worst_u = max(worst_u, u)
        rows.append([y] + [v for z in c.ravel() for v in (z.real, z.imag)] + [u])
    m = p.m
    header = ["offset"] + [f"{part}_c{i}{j}" for i in range(m) for j in range(m) for part in ("re", "im")]
    res.table("radon", header + ["unitarity_defect"], rows)
    res.summary["max_unitarity_defect"] = worst_u
    if "unitarity" in sc.tolerances:
        res.check("unitarity", worst_u, _tol(sc, "unitarity"))
    if prm.gauge is not None:
        gc = prm.gauge
        g = G.su2_bump_gauge(F.PAULI[gc.generator], gc.center, gc.width, gc.amp)
        mats2 = TR.nonabelian_radon(G.apply_gauge(p, g), prm.offsets, prm.angle, prm.t, prm.h)
        diff = max((float(np.max(np.abs(a - b))) for a, b in zip(mats, mats2)), default=0.0)
        res.summary["gauge_invariance_error"] = diff
        if "gauge_invariance" in sc.tolerances:
            res.check("gauge_invariance", diff, _tol(sc, "gauge_invariance"))


def _boundary_function(cfg: BoundaryCfg):
    if cfg.kind == "zero":
        return None

    def f(x, t):
        lo = np.min(x, axis=0)
        hi = np.max(x, axis=0)
        u = (x - 0.5 * (lo + hi)) / (0.5 * (hi - lo)) * (np.pi / 2)
        return cfg.amplitude * np.exp(-1j * cfg.omega * t) * (np.cos(u[:, 0]) ** 2 + np.cos(u[:, 1]) ** 2)
    return f


def _pde_setup(sc):
    prm = sc.task_params
    domain = build_domain(sc.domain)
    p = build_potential(sc.potentials[0], domain.T)
    nt = max(1, int(round(domain.T / prm.grid.dt)))
    grid = S.GridSpec.covering(domain, prm.grid.n, domain.T / nt, nt)
    return prm, domain, p, grid, _boundary_function(prm.boundary)


def task_boundary_data(sc, res):
    prm, domain, p, grid, f = _pde_setup(sc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w = S.solve_ibvp(p, domain, grid, f)
    bd = S.boundary_data(w, p)
    res.table("boundary_data", ["node", "arc", "t", "f1", "f2", "f3_1", "f3_2"],
              [[n, bd.arc[n], t, bd.f1[k, n], bd.f2[k, n], bd.f3[k, n, 0], bd.f3[k, n, 1]]
               for k, t in enumerate(bd.times) for n in range(len(bd.arc))])
    res.summary["grid"] = grid.to_dict()
    res.summary["max_f1"] = float(bd.f1.max())
    res.summary["min_f1"] = float(bd.f1.min())
    res.summary["norms_final"] = float(w.norms()[-1])
    gauge = build_gauge(prm.gauge, domain)
    if gauge is not None:
        pg = G.apply_gauge(p, gauge)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            w2 = S.solve_ibvp(pg, domain, grid, f)
        diff = bd.max_difference(S.boundary_data(w2, pg))
        res.summary["gauge_discrepancy"] = diff
        if "gauge_discrepancy" in sc.tolerances:
            res.check("gauge_discrepancy", max(diff.values()), _tol(sc, "gauge_discrepancy"))


def task_dtn(sc, res):
    prm, domain, p, grid, f = _pde_setup(sc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lam = S.dtn_apply(p, domain, grid, f)
    _, _, _, arc, _ = S.boundary_nodes(grid)
    res.table("dtn", ["node", "arc", "t", "re_lambda", "im_lambda"],
              [[n, arc[n], t, lam[k, n].real, lam[k, n].imag]
               for k, t in enumerate(grid.times) for n in range(len(arc))])
    res.summary["grid"] = grid.to_dict()
    res.summary["max_abs_lambda"] = float(np.max(np.abs(lam)))
    gauge = build_gauge(prm.gauge, domain)
    if gauge is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lam2 = S.dtn_apply(G.apply_gauge(p, gauge), domain, grid, f)
        diff = float(np.max(np.abs(lam2 - lam)))
        res.summary["gauge_discrepancy"] = diff
        if "gauge_discrepancy" in sc.tolerances:
            res.check("gauge_discrepancy", diff, _tol(sc, "gauge_discrepancy"))


def task_shielded(sc, res):
    prm = sc.task_params
    cfg = sc.potentials[0]
    if cfg.kind not in ("shielded-electric", "shielded-magnetic"):
        raise InvalidScenario("shielded-demo needs a shielded potential")
    T = sc.domain.T if sc.domain is not None else 4.0
    p, fs, domain = build_shielded(cfg, T)
    prof = F.SmoothStepProfile(cfg.profile.before, cfg.profile.after, cfg.profile.t1, cfg.profile.eps)
    worst = 0.0
    if cfg.kind == "shielded-electric":
        rows = []
        for x10 in prm.x10:
            patch = F.cross_section(x10, (-prm.box_half, prm.box_half),
                                    (x10 / cfg.v0 - prm.box_half, x10 / cfg.v0 + prm.box_half), "tx2",
                                    initial_panels=4)
            flux = F.surface_flux(fs, patch)
            expected = float(prof(x10 / cfg.v0)) / cfg.v0
            rel = abs(flux - expected) / abs(expected)
            worst = max(worst, rel)
            rows.append([x10, flux, expected, rel])
        res.table("cross_section_flux", ["x10", "flux", "expected", "rel_error"], rows)
        rows = []
        for t in prm.times:
            c = cfg.v0 * t
            lo, hi = (c - prm.box_half, -prm.box_half), (c + prm.box_half, prm.box_half)
            flux = F.surface_flux(fs, F.spatial_rectangle(lo, hi, t, initial_panels=4))
            expected = -float(prof((c + prm.box_half) / cfg.v0)) / cfg.v0
            rel = abs(flux - expected) / abs(expected)
            worst = max(worst, rel)
            rows.append([t, flux, expected, rel])
        res.table("spatial_flux", ["t", "flux", "expected", "rel_error"], rows)
    else:
        rows = []
        for t in prm.times:
            ob = domain.obstacles[0]
            loop = geo.generator_loops(domain, t, prm.loop_clearance)[0]
            circ = F.line_integral_em(p, F.SpacetimePath.spatial(loop, t, closed=True))
            expected = float(prof(t))
            rel = abs(circ - expected) / abs(expected)
            worst = max(worst, rel)
            rows.append([t, circ, expected, rel])
        res.table("circulation", ["t", "circulation", "expected", "rel_error"], rows)
    res.summary["max_relative_error"] = worst
    if "relative_flux" in sc.tolerances:
        res.check("relative_flux", worst, _tol(sc, "relative_flux"))


TASKS = {
    "holonomy": task_holonomy,
    "trace-rays": task_trace_rays,
    "ray-transforms": task_ray_transforms,
    "equivalence": task_equivalence,
    "nonabelian-radon": task_radon,
    "schrodinger-boundary-data": task_boundary_data,
    "dtn": task_dtn,
    "shielded-demo": task_shielded,
}


# --------------------------------------------------------------------------
# reports


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def run_scenario(source, overrides=(), out_dir="abflux-out", timings=True):
    """Run a scenario and write its report; returns (report dict, exit code)."""
    sc = load_scenario(source, overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = Result()
    t0 = time.perf_counter()
    TASKS[sc.task](sc, res)
    elapsed = time.perf_counter() - t0
    for name, (header, rows) in res.tables.items():
        _write_table(out / f"{name}.csv", header, rows)
    passed = all(c["pass"] for c in res.checks)
    report = {
        "schema_version": SCHEMA_VERSION,
        "scenario": sc.model_dump(mode="json"),
        "task": sc.task,
        "summary": _clean(res.summary),
        "tables": {name: {"file": f"{name}.csv", "rows": len(rows)} for name, (_, rows) in res.tables.items()},
        "checks": _clean(res.checks),
        "pass": passed,
    }
    if timings:
        report["timings"] = {"task_seconds": elapsed}
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return report, EXIT_PASS if passed else EXIT_TOLERANCE


def validate_config(source):
    """Schema and physical sanity diagnostics; an empty list means valid."""
    try:
        sc = load_scenario(source)
    except ConfigInvalid as exc:
        return [f"error: {exc}"]
    diags = []
    if sc.domain is not None:
        try:
            domain = build_domain(sc.domain, validate=False)
            diags += [f"error: {msg}" for msg in domain.diagnose()]
        except (InvalidGeometry, ValueError) as exc:
            diags.append(f"error: {exc}")
            domain = None
    else:
        domain = None
    for k, pc in enumerate(sc.potentials):
        if pc.kind in ("shielded-electric", "shielded-magnetic") and pc.delta > pc.r1 / 4:
            diags.append(f"error: potentials.{k}: mollifier exceeds shielding bound "
                         f"(delta={pc.delta} > r1/4={pc.r1 / 4})")
        elif pc.kind in ("shielded-electric", "shielded-magnetic"):
            try:
                build_shielded(pc, sc.domain.T if sc.domain else 4.0)
            except InvalidScenario as exc:
                diags.append(f"error: potentials.{k}: {exc}")
    if sc.task in ("schrodinger-boundary-data", "dtn") and domain is not None:
        prm = sc.task_params
        grid = S.GridSpec.covering(domain, prm.grid.n, prm.grid.dt)
        h = min(grid.hx, grid.hy)
        for j, ob in enumerate(domain.obstacles):
            speed = ob.motion.speed_bound
            if grid.dt * speed >= h:
                diags.append(f"error: obstacle {j} moves {grid.dt * speed:.3g} per step, not below h={h:.3g}")
        if grid.dt > h * h:
            diags.append(f"warning: dt={grid.dt:.3g} exceeds h^2={h * h:.3g}")
    return diags


# --------------------------------------------------------------------------
# entry point


def _parser():
    ap = argparse.ArgumentParser(prog="abflux", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file or built-in scenario")
    run.add_argument("config")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    run.add_argument("--out", default="abflux-out")
    run.add_argument("--no-timings", action="store_true")
    val = sub.add_parser("validate", help="check a scenario without running it")
    val.add_argument("config")
    sub.add_parser("list-scenarios", help="list built-in scenarios")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "list-scenarios":
        for name in builtin_names():
            desc = yaml.safe_load(_read_source(name)).get("description", "")
            print(f"{name}\t{desc}")
        return EXIT_PASS
    if args.command == "validate":
        diags = validate_config(args.config)
        for d in diags:
            print(d)
        return EXIT_ERROR if any(d.startswith("error") for d in diags) else EXIT_PASS
    try:
        report, code = run_scenario(args.config, args.overrides, args.out, not args.no_timings)
    except (AbfluxError, ValueError) as exc:
        print(f"abflux: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    status = "PASS" if code == EXIT_PASS else "FAIL"
    print(f"{report['scenario']['name']}: {status}")
    for c in report["checks"]:
        print(f"  {c['name']}: {c['value']} (tolerance {c['tolerance']}) {'ok' if c['pass'] else 'FAILED'}")
    print(f"  report: {Path(args.out) / 'report.json'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
