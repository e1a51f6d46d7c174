"""Printability analysis: validation, measurements, ray-cast wall thickness.

The report is a pure function of ``(mesh, config)``; its JSON form prints
every float with 9 significant digits so it is byte-stable across runs.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NotWatertight
from .geometry import sample_surface
from .mesh import measure, validate
from .raycast import RayGrid

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
MAX_THIN_POINTS = 1000
RAY_EPSILON = 1e-6  # times the bbox diagonal

REASON_WATERTIGHT = "not watertight"
REASON_MANIFOLD = "not manifold"
REASON_COMPONENTS = "multiple components"
REASON_WALL = "wall below minimum"


@dataclass(frozen=True)
class PrintConfig:
    min_wall_mm: float = 1.0
    min_feature_mm: float = 0.8
    thickness_sample_count: int = 10000
    rng_seed: int = 0
    require_single_component: bool = True
    infill_fraction: float | None = None
    filament_diameter_mm: float = 1.75

    def __post_init__(self):
        if not (self.min_wall_mm > 0 and self.min_feature_mm > 0 and self.filament_diameter_mm > 0):
            raise ConfigError("printcheck thresholds must be positive")
        if int(self.thickness_sample_count) < 100:
            raise ConfigError(f"thickness_sample_count must be >= 100, got {self.thickness_sample_count}")
        if self.infill_fraction is not None and not 0 < self.infill_fraction <= 1:
            raise ConfigError(f"infill_fraction must lie in (0, 1], got {self.infill_fraction}")


@dataclass(frozen=True)
class ThicknessStats:
    min: float
    p1: float
    p5: float
    median: float
    samples: int
    misses: int
    thin_points: np.ndarray = field(repr=False)  # (k, 3)
    thin_values: np.ndarray = field(repr=False)


def wall_thickness(mesh, config=PrintConfig()):
    """Local wall thickness at area-uniform surface samples.

    Each sample shoots a ray along the inward normal, starting a hair inside
    the surface; the thickness is the distance to the first triangle hit.
    Rays that escape (only possible on bad geometry) are counted as misses
    and left out of the statistics.
    """
    if not validate(mesh).is_watertight:
        raise NotWatertight("wall thickness needs a watertight mesh")
    rng = np.random.default_rng(config.rng_seed)
    pts, faces = sample_surface(mesh, int(config.thickness_sample_count), rng)
    inward = -mesh.face_normals()[faces]
    eps = RAY_EPSILON * measure(mesh).bbox_diagonal
    grid = RayGrid(mesh)
    t = grid.first_hit(pts + eps * inward, inward)
    hit = np.isfinite(t)
    thick = t[hit] + eps
    if not hit.all():
        logger.warning("%d of %d thickness rays escaped", int((~hit).sum()), len(t))
    if len(thick) == 0:
        raise NotWatertight("no thickness ray hit the mesh")
    p1, p5, med = np.percentile(thick, [1, 5, 50])
    # the percentile interpolation can undershoot the min by rounding; clamp
    lo = float(thick.min())
    p1 = max(float(p1), lo)
    p5 = max(float(p5), p1)
    med = max(float(med), p5)
    thin = np.flatnonzero(hit)[thick < config.min_wall_mm]
    return ThicknessStats(
        min=lo, p1=p1, p5=p5, median=med, samples=int(len(t)), misses=int((~hit).sum()),
        thin_points=pts[thin], thin_values=t[thin] + eps,
    )


@dataclass(frozen=True)
class PrintReport:
    validation: object
    volume: float
    area: float
    bbox_min: tuple
    bbox_max: tuple
    wall_thickness: ThicknessStats | None
    verdict: str
    reasons: tuple
    warnings: tuple
    config: PrintConfig

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        w = self.wall_thickness
        out = {
            "report_version": REPORT_VERSION,
            "verdict": self.verdict,
            "reasons": list(self.reasons),
            "warnings": list(self.warnings),
            "validation": self.validation.to_dict(),
            "volume_mm3": self.volume,
            "area_mm2": self.area,
            "bbox_mm": {"min": list(self.bbox_min), "max": list(self.bbox_max)},
            "wall_thickness_mm": None,
            "thin_sample_count": 0,
            "thin_sample_points": [],
            "config": asdict(self.config),
        }
        if w is not None:
            out["wall_thickness_mm"] = {
                "min": w.min, "p1": w.p1, "p5": w.p5, "median": w.median,
                "samples": w.samples, "misses": w.misses,
            }
            out["thin_sample_count"] = int(len(w.thin_values))
            out["thin_sample_points"] = [
                {"point": p.tolist(), "thickness": float(v)}
                for p, v in zip(w.thin_points[:MAX_THIN_POINTS], w.thin_values[:MAX_THIN_POINTS])
            ]
        if self.config.infill_fraction is not None:
            r = self.config.filament_diameter_mm / 2
            out["filament_estimate"] = {
                "length_mm": self.volume * self.config.infill_fraction / (math.pi * r * r),
                "note": "estimate, not validated",
            }
        return out

    def to_json(self):
        return dumps(self.to_dict()) + "\n"


def _fmt(x):
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return "null"
        s = format(x, ".9g")
        return s if any(ch in s for ch in ".en") else s + ".0"
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in x.items()) + "}"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    raise TypeError(f"cannot serialise {type(x).__name__}")


def dumps(obj):
    """JSON text with every float at 9 significant digits."""
    return _fmt(obj)


def build_report(mesh, config=PrintConfig()):
    """Validate, measure and thickness-check ``mesh``; never raises on bad geometry."""
    result = validate(mesh)
    m = measure(mesh)
    reasons = []
    if not result.is_watertight:
        reasons.append(REASON_WATERTIGHT)
    if not result.is_manifold:
        reasons.append(REASON_MANIFOLD)
    if config.require_single_component and result.component_count != 1:
        reasons.append(REASON_COMPONENTS)
    stats = None
    warnings = []
    if result.is_watertight:
        try:
            stats = wall_thickness(mesh, config)
        except NotWatertight as exc:
            warnings.append(str(exc))
    if stats is not None:
        if stats.p1 < config.min_wall_mm:
            reasons.append(REASON_WALL)
        if stats.min < config.min_feature_mm:
            warnings.append("features thinner than min_feature_mm")
    else:
        warnings.append("wall thickness not measured")
    verdict = "fail" if reasons else "pass"
    logger.info("print check: %s %s", verdict, reasons)
    return PrintReport(
        validation=result, volume=m.volume, area=m.area,
        bbox_min=tuple(float(x) for x in m.bbox_min), bbox_max=tuple(float(x) for x in m.bbox_max),
        wall_thickness=stats, verdict=verdict, reasons=tuple(reasons), warnings=tuple(warnings),
        config=config,
    )
