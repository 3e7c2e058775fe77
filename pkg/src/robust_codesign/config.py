"""Run configuration: JSON schema, defaults and per-stage seed derivation."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .economics import EconomicsSpec
from .empc import ControllerParams, Model, SizingParams
from .search import RiskMeasure
from .thermal import AssetParams, BuildingParams
from .timeseries import SynthConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    "parallel": 1,
    "out": "out",
    "data": {"csv": None, "resolution": 15, "synth": {"span_hours": 8760 + 48}},
    "heldout": None,
    "model": {"building": {}, "assets": {}, "T_lo": 19.0, "T_hi": 25.0, "soc_terminal_floor": None,
              "recovery_penalty": 1000.0},
    "controller": {
        "delta_T": 15,
        "T_d_min": 5,
        "n_f_range": [1, 24],
        "reference": [1, 3, 24],
        "fixed": [1, 1, 24],
        "epsilon": 1.0,
        "window_hours": 168,
        "windows": 1,
        "p_samples": "corners",
        "search": "exhaustive",
        "skip_tuning": False,
        "retune": True,
    },
    "sizing": {"battery": [0, 60, 1], "pv": [0, 53, 1], "search": "pattern"},
    "subsampling": {"sim_hours": 168, "stride_hours": None, "scaling": True, "k_max": 100,
                    "d_max": 10.0, "n_c": None, "search": "pattern"},
    "codesign": {"risk": "mean", "validation_threshold": None, "max_rounds": 1},
}

_num = {"type": "number"}
_int = {"type": "integer"}
_triple = {"type": "array", "items": _int, "minItems": 3, "maxItems": 3}
_pair = {"type": "array", "items": _int, "minItems": 2, "maxItems": 2}

SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "parallel": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "csv": {"type": ["string", "null"]},
                "resolution": {"type": "number", "exclusiveMinimum": 0},
                "synth": {"type": ["object", "null"]},
            },
        },
        "heldout": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "properties": {
                "csv": {"type": ["string", "null"]},
                "resolution": {"type": "number", "exclusiveMinimum": 0},
                "synth": {"type": ["object", "null"]},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "building": {"type": "object"},
                "assets": {"type": "object"},
                "T_lo": _num,
                "T_hi": _num,
                "soc_terminal_floor": {"type": ["number", "null"]},
                "recovery_penalty": _num,
            },
        },
        "controller": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta_T": {"type": "number", "exclusiveMinimum": 0},
                "T_d_min": {"type": "number", "exclusiveMinimum": 0},
                "n_f_range": _pair,
                "reference": _triple,
                "fixed": _triple,
                "epsilon": {"type": "number", "minimum": 0},
                "window_hours": {"type": "number", "exclusiveMinimum": 0},
                "windows": {"type": "integer", "minimum": 1},
                "p_samples": {"oneOf": [{"enum": ["corners"]},
                                        {"type": "array", "items": _pair, "minItems": 1}]},
                "search": {"enum": ["exhaustive", "pattern"]},
                "skip_tuning": {"type": "boolean"},
                "retune": {"type": "boolean"},
            },
        },
        "sizing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "battery": _triple,
                "pv": _triple,
                "search": {"enum": ["exhaustive", "pattern"]},
            },
        },
        "subsampling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sim_hours": {"type": "number", "exclusiveMinimum": 0},
                "stride_hours": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "scaling": {"type": "boolean"},
                "k_max": {"type": "integer", "minimum": 2},
                "d_max": {"type": "number", "exclusiveMinimum": 0},
                "n_c": {"type": ["integer", "null"], "minimum": 1},
                "search": {"enum": ["exhaustive", "pattern"]},
            },
        },
        "codesign": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "risk": {"enum": ["mean", "max"]},
                "validation_threshold": {"type": ["number", "null"], "minimum": 0},
                "max_rounds": {"type": "integer", "minimum": 0},
            },
        },
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def derive_seed(master: int, stage: str) -> int:
    """Stage seed: first 8 bytes of sha256("<master>:<stage>") as an unsigned integer, mod 2**32."""
    h = hashlib.sha256(f"{master}:{stage}".encode()).digest()
    return int.from_bytes(h[:8], "big") % (2**32)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | str = ".") -> RunConfig:
        try:
            jsonschema.validate(d, SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config error at {path}: {exc.message}") from None
        cfg = cls(_merge(DEFAULTS, d), Path(base_dir))
        cfg._check()
        return cfg

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(d, path.parent)

    def with_overrides(self, **sections) -> RunConfig:
        """Return a copy with nested overrides, e.g. ``subsampling={"n_c": 8}``."""
        over = {k: v for k, v in sections.items() if v is not None}
        cfg = RunConfig(_merge(self.raw, over), self.base_dir)
        cfg._check()
        return cfg

    def _check(self) -> None:
        """Semantic checks that the schema cannot express; raise ConfigError early."""
        try:
            self.model()
            self.economics()
            c = self.raw["controller"]
            self.reference()
            self.fixed_pc()
            lo, hi = c["n_f_range"]
            if not 1 <= lo <= hi:
                raise ValueError("n_f_range must satisfy 1 <= lo <= hi")
            for name in ("battery", "pv"):
                a, b, s = self.raw["sizing"][name]
                if a < 0 or b < a or s < 1:
                    raise ValueError(f"sizing.{name} must be [lower, upper, step] with 0 <= lower <= upper")
            if self.raw["sizing"]["battery"][1] > self.model().assets.SoC_max:
                raise ValueError("battery upper bound exceeds SoC_max")
            if self.raw["sizing"]["pv"][1] * 1.68 > self.model().building.S_F + 1e-9:
                raise ValueError("PV upper bound exceeds the floor area")
            for key in ("data", "heldout"):
                src = self.raw[key]
                if src is not None and not (src.get("csv") or src.get("synth") is not None):
                    raise ValueError(f"{key} needs either csv or synth")
                if src is not None and src.get("synth") is not None:
                    SynthConfig.from_dict(src["synth"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config error: {exc}") from None

    # typed views ---------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)

    def model(self) -> Model:
        m = self.raw["model"]
        return Model(building=BuildingParams(**m["building"]), assets=AssetParams(**m["assets"]),
                     T_lo=float(m["T_lo"]), T_hi=float(m["T_hi"]),
                     soc_terminal_floor=m["soc_terminal_floor"],
                     recovery_penalty=float(m["recovery_penalty"]))

    def economics(self) -> EconomicsSpec:
        return EconomicsSpec.from_assets(self.model().assets)

    def _pc(self, triple) -> ControllerParams:
        c = self.raw["controller"]
        return ControllerParams(*triple, delta_T=c["delta_T"], T_d_min=c["T_d_min"])

    def reference(self) -> ControllerParams:
        return self._pc(self.raw["controller"]["reference"])

    def fixed_pc(self) -> ControllerParams:
        return self._pc(self.raw["controller"]["fixed"])

    def pc(self, triple) -> ControllerParams:
        return self._pc(triple)

    def risk(self) -> RiskMeasure:
        return RiskMeasure.parse(self.raw["codesign"]["risk"])

    def p_samples(self) -> list[SizingParams]:
        ps = self.raw["controller"]["p_samples"]
        if ps == "corners":
            b0, b1, _ = self.raw["sizing"]["battery"]
            v0, v1, _ = self.raw["sizing"]["pv"]
            return [SizingParams(b0, v0), SizingParams(b0, v1), SizingParams(b1, v0), SizingParams(b1, v1),
                    SizingParams((b0 + b1) // 2, (v0 + v1) // 2)]
        return [SizingParams(*p) for p in ps]

    def out_dir(self, override: str | None = None) -> Path:
        p = Path(override or self.raw["out"])
        return p if p.is_absolute() else self.base_dir / p if override is None else p

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p
