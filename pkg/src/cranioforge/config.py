"""Pipeline configuration and the mesh-step vocabulary shared by the CLI.

A pipeline is one JSON document. Stages always run in the order
segment -> edit -> extract -> steps (repair | refine | shape, any order) ->
check. Unknown keys are rejected at every level so typos fail loudly.
Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .printcheck import PrintConfig
from .segmentation import BONE_HI_HU, BONE_LO_HU

# op -> (required params, optional params with defaults)
STEP_OPS = {
    "repair": {
        "fill_holes": (set(), {"loops": "all"}),
        "remove_region": ({"seed_mm", "radius_mm"}, {}),
        "refill_region": ({"seed_mm", "radius_mm"}, {}),
        "bridge": ({"edge_a", "edge_b"}, {}),
    },
    "refine": {
        "remesh": (set(), {"target_edge_mm": None, "iterations": 5}),
        "relax": (set(), {"mode": "taubin", "lambda": 0.5, "mu": -0.53, "iterations": 10}),
        "decimate": (set(), {"target_triangles": None, "ratio": None}),
    },
    "shape": {
        "cut": ({"point_mm", "normal"}, {"keep": "negative", "cap": True, "emit_both": None}),
        "sculpt": ({"ops"}, {}),
    },
}
SCULPT_KEYS = {"op", "center_mm", "radius_mm", "offset_mm", "note"}


def parse_loop_selector(sel):
    """``"all"``, ``"largest"``, ``"all<=P"`` (perimeter mm) or a seed point.

    Returns ``(kind, value)`` with kind in all/largest/seed.
    """
    if isinstance(sel, str):
        s = sel.replace(" ", "")
        if s in ("all", "largest"):
            return s, None
        if s.startswith("all<="):
            try:
                limit = float(s[5:])
            except ValueError:
                raise ConfigError(f"bad loop selector {sel!r}") from None
            return "all", limit
        raise ConfigError(f"loop selector must be 'all', 'largest', 'all<=P' or [x, y, z], got {sel!r}")
    return "seed", _vec3(sel, "loops")


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown keys {extra}")


def _vec3(value, where):
    try:
        out = [float(x) for x in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected three numbers, got {value!r}") from None
    if len(out) != 3:
        raise ConfigError(f"{where}: expected three numbers, got {value!r}")
    return out


@dataclass(frozen=True)
class Step:
    """One mesh operation: ``stage`` in repair/refine/shape, ``op`` within it."""

    stage: str
    op: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d, where="step"):
        if not isinstance(d, dict):
            raise ConfigError(f"{where}: expected an object")
        stage, op = d.get("stage"), d.get("op")
        if stage not in STEP_OPS:
            raise ConfigError(f"{where}: stage must be one of {sorted(STEP_OPS)}, got {stage!r}")
        if op not in STEP_OPS[stage]:
            raise ConfigError(f"{where}: {stage} op must be one of {sorted(STEP_OPS[stage])}, got {op!r}")
        required, optional = STEP_OPS[stage][op]
        params = {k: v for k, v in d.items() if k not in ("stage", "op")}
        _reject_unknown(params, required | set(optional), f"{where} ({stage}.{op})")
        missing = sorted(required - set(params))
        if missing:
            raise ConfigError(f"{where} ({stage}.{op}): missing {missing}")
        resolved = dict(optional)
        resolved.update(params)
        step = cls(stage, op, resolved)
        step.check(where)
        return step

    def check(self, where="step"):
        p = self.params
        key = f"{self.stage}.{self.op}"
        try:
            if key == "repair.fill_holes":
                parse_loop_selector(p["loops"])
            elif key in ("repair.remove_region", "repair.refill_region"):
                _vec3(p["seed_mm"], f"{where}.seed_mm")
                if not float(p["radius_mm"]) > 0:
                    raise ConfigError(f"{where}: radius_mm must be positive")
            elif key == "repair.bridge":
                for k in ("edge_a", "edge_b"):
                    if len(p[k]) != 2:
                        raise ConfigError(f"{where}.{k}: expected two vertex indices")
            elif key == "refine.decimate":
                if (p["target_triangles"] is None) == (p["ratio"] is None):
                    raise ConfigError(f"{where}: give exactly one of target_triangles or ratio")
            elif key == "refine.relax":
                if p["mode"] not in ("uniform", "taubin"):
                    raise ConfigError(f"{where}: mode must be 'uniform' or 'taubin'")
            elif key == "shape.cut":
                _vec3(p["point_mm"], f"{where}.point_mm")
                _vec3(p["normal"], f"{where}.normal")
                if p["keep"] not in ("positive", "negative"):
                    raise ConfigError(f"{where}: keep must be 'positive' or 'negative'")
            elif key == "shape.sculpt":
                if not isinstance(p["ops"], list):
                    raise ConfigError(f"{where}: sculpt ops must be a list")
                for i, s in enumerate(p["ops"]):
                    _reject_unknown(s, SCULPT_KEYS, f"{where}.ops[{i}]")
                    if s.get("op", "brush_displace") != "brush_displace":
                        raise ConfigError(f"{where}.ops[{i}]: unknown sculpt op {s.get('op')!r}")
                    _vec3(s["center_mm"], f"{where}.ops[{i}].center_mm")
                    float(s["radius_mm"]), float(s["offset_mm"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where} ({key}): bad parameter {exc}") from None

    def to_dict(self):
        return {"stage": self.stage, "op": self.op, **self.params}


def print_config_from_dict(d):
    _reject_unknown(d, {f.name for f in fields(PrintConfig)}, "printcheck")
    try:
        return PrintConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"printcheck: {exc}") from exc


@dataclass(frozen=True)
class ExtractConfig:
    sigma: float = 0.7
    iso: float = 0.5


@dataclass(frozen=True)
class OutputConfig:
    stl: str | None = None
    stl_format: str = "binary"
    obj: str | None = None
    report: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    input: str
    threshold: tuple = (BONE_LO_HU, BONE_HI_HU)
    edit_script: object = None  # path or inline list
    extract: ExtractConfig = ExtractConfig()
    steps: tuple = ()
    printcheck: PrintConfig = PrintConfig()
    outputs: OutputConfig = OutputConfig()
    checkpoints: str | None = None

    @classmethod
    def from_dict(cls, d, base_dir="."):
        top = {f.name for f in fields(cls)}
        _reject_unknown(d, top, "config")
        if "input" not in d:
            raise ConfigError("config: missing required key 'input'")
        base = Path(base_dir)

        def path(p):
            return None if p is None else str(base / p)

        th = d.get("threshold", {})
        _reject_unknown(th, {"lo", "hi"}, "threshold")
        lo, hi = th.get("lo", BONE_LO_HU), th.get("hi", BONE_HI_HU)

        ex = d.get("extract", {})
        _reject_unknown(ex, {f.name for f in fields(ExtractConfig)}, "extract")

        steps = d.get("steps", [])
        if not isinstance(steps, list):
            raise ConfigError("steps: expected a list")
        parsed = []
        for i, s in enumerate(steps):
            step = Step.from_dict(s, f"steps[{i}]")
            if step.op == "cut" and step.params.get("emit_both"):
                step = Step(step.stage, step.op, {**step.params, "emit_both": path(step.params["emit_both"])})
            parsed.append(step)

        pc = d.get("printcheck", {})
        _reject_unknown(pc, {f.name for f in fields(PrintConfig)}, "printcheck")
        print_config = print_config_from_dict(pc)
        out = d.get("outputs", {})
        _reject_unknown(out, {f.name for f in fields(OutputConfig)}, "outputs")
        if out.get("stl_format", "binary") not in ("binary", "ascii"):
            raise ConfigError("outputs.stl_format must be 'binary' or 'ascii'")

        script = d.get("edit_script")
        if isinstance(script, str):
            script = path(script)
        elif script is not None and not isinstance(script, list):
            raise ConfigError("edit_script must be a path or an inline list of ops")
        try:
            return cls(
                input=path(d["input"]),
                threshold=(int(lo), int(hi)),
                edit_script=script,
                extract=ExtractConfig(**ex),
                steps=tuple(parsed),
                printcheck=print_config,
                outputs=OutputConfig(**{k: (path(v) if k in ("stl", "obj", "report") else v) for k, v in out.items()}),
                checkpoints=path(d.get("checkpoints")),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config: {exc}") from exc

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except ValueError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(d, path.parent)

    def to_dict(self):
        return {
            "input": self.input,
            "threshold": {"lo": self.threshold[0], "hi": self.threshold[1]},
            "edit_script": self.edit_script,
            "extract": asdict(self.extract),
            "steps": [s.to_dict() for s in self.steps],
            "printcheck": asdict(self.printcheck),
            "outputs": asdict(self.outputs),
            "checkpoints": self.checkpoints,
        }
