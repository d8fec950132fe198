"""
Experiment configuration: TOML files and built-in presets.

A config file looks like::

    experiment = "SerSweep"
    seed = 2015
    esn0_grid_db = {start = 12.0, stop = 22.0, step = 0.5}
    target_ser = 1e-4
    output_dir = "out/fig-ser-6bit"

    [[constellations]]
    name = "88-LAM"            # a catalogue name ...

    [[constellations]]
    kind = "lam"               # ... or an explicit generator table
    count = 88
    offset = [1.0, 0.0, 0.0, 0.0]
    label = "88-LAM (other hole)"

    [[comparisons]]
    a = "88-LAM"
    b = "dual 8-PSK"

Optional sections ``[monte_carlo]``, ``[papr]`` and ``[jitter]`` override
the stopping rule, the PAPR protocol and the timing-loop grid.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import tomli
import tomli_w

from . import constellations as cons
from .errors import ConfigError


class ExperimentKind(str, enum.Enum):
    SER_SWEEP = "SerSweep"
    GAIN_AT_THRESHOLD = "GainAtThreshold"
    PAPR_TABLE = "PaprTable"
    JITTER_SWEEP = "JitterSweep"
    CONSTELLATION_EXPORT = "ConstellationExport"


# ---------------------------------------------------------------------------
# Constellation catalogue
# ---------------------------------------------------------------------------

CATALOGUE = {
    "256-LAM": {"kind": "lam", "count": 256},
    "88-LAM": {"kind": "lam", "count": 88},
    "64-4D-PSK": {"kind": "sphere", "count": 64},
    "hex-cyl-64-PSK": {"kind": "hexcyl", "count": 64},
    "bi-orthogonal": {"kind": "biortho", "rotated": True},
    "bi-orthogonal-axes": {"kind": "biortho", "rotated": False},
    "dual QPSK": {"kind": "dual", "base": "QPSK"},
    "dual 8-PSK": {"kind": "dual", "base": "PSK8"},
    "dual 3-PSK": {"kind": "dual", "base": "PSK3"},
    "dual 16-QAM": {"kind": "dual", "base": "QAM16"},
    "dual 16-APSK": {"kind": "dual", "base": "APSK16"},
    "dual 8-hex QAM": {"kind": "dual", "base": "HEXQAM8"},
}

_KIND_KEYS = {
    "lam": {"count", "offset"},
    "sphere": {"count", "seed", "file"},
    "hexcyl": {"count", "columns"},
    "biortho": {"rotated"},
    "dual": {"base"},
    "file": {"path"},
}


def normalize_generator_spec(item: Any) -> dict:
    """Resolve a catalogue name or generator table to a full table with a label."""
    if isinstance(item, str):
        item = {"name": item}
    if not isinstance(item, dict):
        raise ConfigError(f"constellation entry must be a name or a table, got {item!r}")
    item = dict(item)
    if "name" in item:
        name = item.pop("name")
        if name not in CATALOGUE:
            raise ConfigError(f"unknown constellation {name!r}; known: {', '.join(CATALOGUE)}")
        item = {**CATALOGUE[name], **item, "label": item.get("label", name)}
    kind = item.get("kind")
    if kind not in _KIND_KEYS:
        raise ConfigError(f"constellation kind must be one of {sorted(_KIND_KEYS)}, got {kind!r}")
    extra = set(item) - _KIND_KEYS[kind] - {"kind", "label"}
    if extra:
        raise ConfigError(f"constellation kind {kind!r} does not take {sorted(extra)}")
    if "label" not in item:
        named = [n for n, v in CATALOGUE.items() if v == item]
        if named:
            item["label"] = named[0]
            return item
        item["label"] = kind + "".join(f"-{item[k]}" for k in sorted(_KIND_KEYS[kind]) if k in item)
    return item


def build_constellation(spec: dict) -> cons.Constellation:
    spec = normalize_generator_spec(spec)
    kind, label = spec["kind"], spec["label"]
    if kind == "lam":
        carve = cons.LatticeCarveSpec(int(spec.get("count", 88)), tuple(spec.get("offset", cons.DEEP_HOLE)))
        c = cons.generate_d4_lam(carve)
    elif kind == "sphere":
        if "file" in spec:
            c = cons.read_constellation(spec["file"]).normalize()
        else:
            c = cons.generate_sphere_4dpsk(int(spec.get("count", 64)), cons.PackingParams(seed=int(spec.get("seed", 1))))
    elif kind == "hexcyl":
        c = cons.generate_hex_cylinder_psk(int(spec.get("count", 64)), columns=spec.get("columns"))
    elif kind == "biortho":
        c = cons.generate_biorthogonal(bool(spec.get("rotated", True)))
    elif kind == "dual":
        c = cons.generate_classic_dual(spec["base"])
    else:
        c = cons.read_constellation(spec["path"])
    return c.renamed(label)


# ---------------------------------------------------------------------------
# Config dataclasses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonteCarloSettings:
    min_errors: int = 200
    max_symbols: int = 200_000_000
    batch: int = 1 << 16
    # grid points whose union bound is below this are skipped
    ser_floor: float = 1e-5
    refine: bool = True
    refine_step_db: float = 0.25
    # error target for the refined points around the threshold
    refine_min_errors: int = 200


@dataclass(frozen=True)
class PaprSettings:
    n_symbols: int = 200_000
    samples_per_symbol: int = 8
    span: int = 32
    rolloff: float = 0.20
    # set-flipping bi-orthogonal row in the table
    include_alternating: bool = True


@dataclass(frozen=True)
class JitterSettings:
    bn_t: float = 5e-4
    rolloff: float = 0.20
    sps: int = 4
    measure_symbols: int = 200_000
    settle_symbols: Optional[int] = None
    modes: tuple[str, ...] = ("SinglePol", "DualPol")
    prefilter: tuple[bool, ...] = (False, True)
    # None: derived from the roll-off
    xi: Optional[float] = None
    tau_true: float = 0.25


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentKind
    constellations: tuple = ()
    esn0_grid_db: tuple[float, ...] = ()
    target_ser: float = 1e-4
    seed: int = 2015
    output_dir: str = "out"
    comparisons: tuple[tuple[str, str], ...] = ()
    monte_carlo: MonteCarloSettings = MonteCarloSettings()
    papr: PaprSettings = PaprSettings()
    jitter: JitterSettings = JitterSettings()
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "experiment", ExperimentKind(self.experiment))
        object.__setattr__(self, "constellations", tuple(normalize_generator_spec(c) for c in self.constellations))
        object.__setattr__(self, "esn0_grid_db", tuple(float(x) for x in self.esn0_grid_db))
        object.__setattr__(self, "comparisons", tuple(tuple(p) for p in self.comparisons))
        validate(self)

    @property
    def labels(self) -> list[str]:
        return [normalize_generator_spec(s)["label"] for s in self.constellations]


def validate(cfg: ExperimentConfig) -> None:
    kind = cfg.experiment
    if kind in (ExperimentKind.SER_SWEEP, ExperimentKind.GAIN_AT_THRESHOLD, ExperimentKind.JITTER_SWEEP):
        if not cfg.esn0_grid_db:
            raise ConfigError("esn0_grid_db: grid must not be empty")
        if any(not math.isfinite(x) for x in cfg.esn0_grid_db):
            raise ConfigError("esn0_grid_db: grid values must be finite")
    if not 0 < cfg.target_ser < 0.5:
        raise ConfigError(f"target_ser: {cfg.target_ser} outside (0, 0.5)")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed: must be a 64-bit unsigned integer")
    if kind is not ExperimentKind.JITTER_SWEEP and not cfg.constellations:
        raise ConfigError("constellations: at least one constellation is required")
    labels = cfg.labels
    if len(set(labels)) != len(labels):
        raise ConfigError("constellations: labels must be unique")
    for a, b in cfg.comparisons:
        for lab in (a, b):
            if lab not in labels:
                raise ConfigError(f"comparisons: {lab!r} is not one of the configured constellations")
    mc = cfg.monte_carlo
    if mc.min_errors < 1 or mc.max_symbols < 1 or mc.batch < 1:
        raise ConfigError("monte_carlo: min_errors, max_symbols and batch must be positive")
    j = cfg.jitter
    if not 0 < j.bn_t < 0.1:
        raise ConfigError("jitter.bn_t: must lie in (0, 0.1)")
    if j.sps < 2:
        raise ConfigError("jitter.sps: must be >= 2")
    for m in j.modes:
        if m not in ("SinglePol", "DualPol"):
            raise ConfigError(f"jitter.modes: unknown mode {m!r}")


# ---------------------------------------------------------------------------
# TOML round trip
# ---------------------------------------------------------------------------

_TOP_KEYS = {"experiment", "constellations", "esn0_grid_db", "target_ser", "seed", "output_dir", "comparisons",
             "monte_carlo", "papr", "jitter", "name"}


def _grid(value) -> tuple[float, ...]:
    if isinstance(value, dict):
        try:
            start, stop, step = float(value["start"]), float(value["stop"]), float(value["step"])
        except KeyError as exc:
            raise ConfigError(f"esn0_grid_db: range table needs start/stop/step (missing {exc})") from None
        if step <= 0:
            raise ConfigError("esn0_grid_db: step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + k * step, 10) for k in range(max(n, 0)))
    if not isinstance(value, list):
        raise ConfigError("esn0_grid_db: expected a list or a {start, stop, step} table")
    return tuple(float(v) for v in value)


def _section(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kw = {}
    for k, v in data.items():
        default = getattr(cls(), k)
        kw[k] = tuple(v) if isinstance(default, tuple) else v
    return cls(**kw)


def _locate(text: str, key: str) -> Optional[int]:
    m = re.search(rf"^\s*{re.escape(key)}\s*=", text, flags=re.MULTILINE)
    return text.count("\n", 0, m.start()) + 1 if m else None


def from_dict(data: dict) -> ExperimentConfig:
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    if "experiment" not in data:
        raise ConfigError("experiment: missing (one of " + ", ".join(k.value for k in ExperimentKind) + ")")
    try:
        kind = ExperimentKind(data["experiment"])
    except ValueError:
        raise ConfigError(f"experiment: unknown kind {data['experiment']!r}") from None
    comps = []
    for item in data.get("comparisons", []):
        if not isinstance(item, dict) or set(item) != {"a", "b"}:
            raise ConfigError("comparisons: each entry needs exactly keys a and b")
        comps.append((item["a"], item["b"]))
    consts = tuple(normalize_generator_spec(x) for x in data.get("constellations", []))
    return ExperimentConfig(
        experiment=kind,
        constellations=consts,
        esn0_grid_db=_grid(data.get("esn0_grid_db", [])),
        target_ser=float(data.get("target_ser", 1e-4)),
        seed=int(data.get("seed", 2015)),
        output_dir=str(data.get("output_dir", "out")),
        comparisons=tuple(comps),
        monte_carlo=_section(MonteCarloSettings, data.get("monte_carlo", {}), "monte_carlo"),
        papr=_section(PaprSettings, data.get("papr", {}), "papr"),
        jitter=_section(JitterSettings, data.get("jitter", {}), "jitter"),
        name=str(data.get("name", "custom")),
    )


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse TOML text; errors name the source, the line and the offending field."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    try:
        return from_dict(data)
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0].split(".")[-1]
        line = _locate(text, key)
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def _plain(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items() if v is not None}
    return value


def to_dict(cfg: ExperimentConfig) -> dict:
    out = {
        "name": cfg.name,
        "experiment": cfg.experiment.value,
        "seed": cfg.seed,
        "target_ser": cfg.target_ser,
        "output_dir": cfg.output_dir,
        "esn0_grid_db": list(cfg.esn0_grid_db),
        "constellations": [_plain(dict(s)) for s in cfg.constellations],
        "comparisons": [{"a": a, "b": b} for a, b in cfg.comparisons],
    }
    for sec in ("monte_carlo", "papr", "jitter"):
        obj = getattr(cfg, sec)
        out[sec] = {f.name: _plain(getattr(obj, f.name)) for f in fields(obj) if getattr(obj, f.name) is not None}
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _range(start, stop, step=0.5):
    n = int(round((stop - start) / step)) + 1
    return tuple(round(start + k * step, 10) for k in range(n))


def _specs(*names):
    return tuple(normalize_generator_spec(n) for n in names)


PRESETS: dict[str, ExperimentConfig] = {
    "fig-ser-6bit": ExperimentConfig(
        ExperimentKind.SER_SWEEP,
        _specs("88-LAM", "64-4D-PSK", "dual 8-PSK", "dual 8-hex QAM"),
        _range(10.0, 22.0),
        comparisons=(("88-LAM", "dual 8-PSK"), ("88-LAM", "dual 8-hex QAM"), ("64-4D-PSK", "88-LAM")),
        output_dir="out/fig-ser-6bit",
        name="fig-ser-6bit",
    ),
    "fig-ser-8bit": ExperimentConfig(
        ExperimentKind.SER_SWEEP,
        _specs("256-LAM", "dual 16-QAM", "dual 16-APSK"),
        _range(14.0, 24.0),
        comparisons=(("256-LAM", "dual 16-QAM"), ("256-LAM", "dual 16-APSK")),
        output_dir="out/fig-ser-8bit",
        name="fig-ser-8bit",
    ),
    "fig-ser-cyl": ExperimentConfig(
        ExperimentKind.SER_SWEEP,
        _specs("hex-cyl-64-PSK", "dual 8-PSK"),
        _range(12.0, 22.0),
        comparisons=(("hex-cyl-64-PSK", "dual 8-PSK"),),
        monte_carlo=MonteCarloSettings(refine_min_errors=500),
        output_dir="out/fig-ser-cyl",
        name="fig-ser-cyl",
    ),
    "fig-ser-biortho": ExperimentConfig(
        ExperimentKind.SER_SWEEP,
        _specs("bi-orthogonal", "dual QPSK", "dual 3-PSK"),
        _range(4.0, 17.0),
        comparisons=(("bi-orthogonal", "dual QPSK"), ("bi-orthogonal", "dual 3-PSK")),
        output_dir="out/fig-ser-biortho",
        name="fig-ser-biortho",
    ),
    "tab-papr": ExperimentConfig(
        ExperimentKind.PAPR_TABLE,
        _specs("256-LAM", "dual 16-QAM", "dual 16-APSK", "88-LAM", "64-4D-PSK", "dual 8-hex QAM",
               "hex-cyl-64-PSK", "dual 8-PSK", "bi-orthogonal", "dual QPSK", "dual 3-PSK"),
        output_dir="out/tab-papr",
        name="tab-papr",
    ),
    "fig-jitter": ExperimentConfig(
        ExperimentKind.JITTER_SWEEP,
        (),
        _range(0.0, 30.0, 5.0),
        jitter=JitterSettings(measure_symbols=1_000_000),
        output_dir="out/fig-jitter",
        name="fig-jitter",
    ),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None


def with_overrides(cfg: ExperimentConfig, seed: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
    kw = {}
    if seed is not None:
        kw["seed"] = seed
    if output_dir is not None:
        kw["output_dir"] = output_dir
    return replace(cfg, **kw) if kw else cfg
