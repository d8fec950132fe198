"""
Experiment runner: SER sweeps, threshold gains, the PAPR table and jitter sweeps.

Every Monte-Carlo task draws from ``RngStream(seed, stream_id)`` where the
stream id is a function of the task key only, so results do not depend on
the number of worker processes or on scheduling order.
"""

from __future__ import annotations

import logging
import math
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from scipy.optimize import brentq

from . import report
from .channel import RngStream, SerEstimate, StopRule, simulate_ser, snr_at_ser, union_bound
from .config import ExperimentConfig, ExperimentKind, build_constellation
from .constellations import Constellation, write_constellation
from .errors import NoBracket
from .sync import JitterRow, PolMode, TimingLoopConfig, jitter_curve, xi_rrc
from .waveform import PaprProtocol, PaprReport, PulseShape, papr_report, peak_constraint

log = logging.getLogger(__name__)

REFINED = 1 << 62


@dataclass(frozen=True)
class SerPoint:
    constellation: str
    esn0_db: float
    estimate: SerEstimate
    bits_per_symbol: float
    union_bound: float
    min_errors: int

    @property
    def ebn0_db(self) -> float:
        return self.esn0_db - 10 * math.log10(self.bits_per_symbol)

    @property
    def underresolved(self) -> bool:
        return self.estimate.errors < self.min_errors


@dataclass(frozen=True)
class GainEntry:
    constellation_a: str
    constellation_b: str
    esn0_a_db: float
    esn0_b_db: float
    ebn0_a_db: float
    ebn0_b_db: float

    @property
    def gain_db(self) -> float:
        """Eb/N0 advantage of ``a`` over ``b`` at the target SER."""
        return self.ebn0_b_db - self.ebn0_a_db

    @property
    def gain_esn0_db(self) -> float:
        return self.esn0_b_db - self.esn0_a_db


@dataclass(frozen=True)
class GainReport:
    target_ser: float
    pairs: tuple[GainEntry, ...]

    def get(self, a: str, b: str) -> GainEntry:
        for p in self.pairs:
            if (p.constellation_a, p.constellation_b) == (a, b):
                return p
        raise KeyError((a, b))


@dataclass
class RunResult:
    config: ExperimentConfig
    files: list[Path] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    points: list[SerPoint] = field(default_factory=list)
    gains: Optional[GainReport] = None
    papr: list[tuple[str, PaprReport]] = field(default_factory=list)
    # (name, per-carrier peak, shared dual-carrier peak) at unit average energy
    peaks: list[tuple[str, float, float]] = field(default_factory=list)
    jitter: list[JitterRow] = field(default_factory=list)
    # comparisons that could not be evaluated (NoBracket messages)
    failures: list[str] = field(default_factory=list)

    @property
    def underresolved(self) -> bool:
        return bool(self.failures) or any(p.underresolved for p in self.points)


# ---------------------------------------------------------------------------
# SER curves and gains
# ---------------------------------------------------------------------------


def stream_id(curve_index: int, esn0_db: float, refined: bool = False) -> int:
    sid = (curve_index << 40) + int(round(esn0_db * 1000)) + (1 << 30)
    return sid + (REFINED if refined else 0)


def curves_by_name(points: Sequence[SerPoint]) -> dict[str, list[tuple[float, float]]]:
    out: dict[str, list] = {}
    for p in points:
        out.setdefault(p.constellation, []).append((p.esn0_db, p.estimate.ser))
    return out


def compare_gain(
    curves: dict[str, Sequence[tuple[float, float]]],
    target_ser: float,
    pairs: Sequence[tuple[str, str]],
    bits: dict[str, float],
) -> GainReport:
    """Threshold-crossing gains for the declared comparison pairs.

    ``bits`` maps each curve to its bits per symbol so that crossings can be
    referred to Eb/N0.
    """
    crossing = {}
    entries = []
    for a, b in pairs:
        for name in (a, b):
            if name not in crossing:
                try:
                    crossing[name] = snr_at_ser(curves[name], target_ser, name)
                except NoBracket as exc:
                    raise NoBracket(f"comparison {a} vs {b}: {exc}", curve_name=name) from None
        ea, eb = crossing[a], crossing[b]
        entries.append(
            GainEntry(a, b, ea, eb, ea - 10 * math.log10(bits[a]), eb - 10 * math.log10(bits[b]))
        )
    return GainReport(target_ser, tuple(entries))


def _ser_task(args):
    c, esn0, stop, seed, sid = args
    return simulate_ser(c, esn0, stop, RngStream(seed, sid))


def _map(fn: Callable, tasks: list, jobs: int) -> list:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _simulate_points(consts, keys, cfg: ExperimentConfig, jobs: int) -> list[SerPoint]:
    """Run (curve_index, esn0, min_errors, refined) keys and wrap the results."""
    mc = cfg.monte_carlo
    tasks = [
        (consts[i], x, StopRule(me, mc.max_symbols, mc.batch), cfg.seed, stream_id(i, x, ref))
        for i, x, me, ref in keys
    ]
    results = _map(_ser_task, tasks, jobs)
    out = []
    for (i, x, me, _), est in zip(keys, results):
        c = consts[i]
        out.append(SerPoint(c.name, x, est, c.bits_per_symbol, union_bound(c, x), me))
    return out


def _bracket(curve: list[tuple[float, float]], target: float):
    pts = sorted((x, y) for x, y in curve if y > 0)
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if y0 >= target >= y1:
            return x0, x1
    return None


def _refine_keys(i, curve, target, mc, have):
    br = _bracket(curve, target)
    if br is None:
        return []
    lo, hi = br[0] - 0.5, br[1] + 0.5
    n = int(round((hi - lo) / mc.refine_step_db))
    keys = []
    for k in range(n + 1):
        x = round(lo + k * mc.refine_step_db, 10)
        higher_target = mc.refine_min_errors > mc.min_errors
        if (x not in have) or higher_target:
            keys.append((i, x, max(mc.min_errors, mc.refine_min_errors), higher_target))
    return keys


def simulate_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[SerPoint]:
    """Grid points above the SER floor plus refinement around the target crossing."""
    mc = cfg.monte_carlo
    consts = [build_constellation(s) for s in cfg.constellations]
    keys = [
        (i, x, mc.min_errors, False)
        for i, c in enumerate(consts)
        for x in cfg.esn0_grid_db
        if union_bound(c, x) >= mc.ser_floor
    ]
    points = _simulate_points(consts, keys, cfg, jobs)
    if mc.refine:
        extra = []
        for i, c in enumerate(consts):
            mine = [p for p in points if p.constellation == c.name]
            have = {p.esn0_db for p in mine}
            extra += _refine_keys(i, [(p.esn0_db, p.estimate.ser) for p in mine], cfg.target_ser, mc, have)
        refined = _simulate_points(consts, extra, cfg, jobs)
        replaced = {(p.constellation, p.esn0_db) for p in refined}
        points = [p for p in points if (p.constellation, p.esn0_db) not in replaced] + refined
    points.sort(key=lambda p: ([c.name for c in consts].index(p.constellation), p.esn0_db))
    return points


def run_ser_sweep(cfg: ExperimentConfig, jobs: int = 1) -> tuple[list[SerPoint], Optional[GainReport]]:
    points = simulate_sweep(cfg, jobs)
    return points, gains_from_points(cfg, points)


def gains_from_points(cfg: ExperimentConfig, points: Sequence[SerPoint]) -> Optional[GainReport]:
    """Declared comparisons of ``cfg`` (or first-vs-rest) evaluated on ``points``."""
    names = list(dict.fromkeys(p.constellation for p in points))
    if len(names) < 2 and not cfg.comparisons:
        return None
    bits = {p.constellation: p.bits_per_symbol for p in points}
    pairs = cfg.comparisons or tuple((names[0], n) for n in names[1:])
    return compare_gain(curves_by_name(points), cfg.target_ser, pairs, bits)


def union_bound_crossing(c: Constellation, target: float, lo: float, hi: float) -> float:
    f = lambda x: math.log(max(union_bound(c, x), 1e-300)) - math.log(target)
    if f(lo) < 0:
        return lo
    if f(hi) > 0:
        return hi
    return brentq(f, lo, hi, xtol=1e-4)


def simulate_threshold(cfg: ExperimentConfig, jobs: int = 1) -> list[SerPoint]:
    """Locate each crossing with the union bound, then bracket it by simulation.

    Points are laid on the refine step grid; the walk continues outwards
    until the simulated SER brackets the target on both sides.
    """
    mc = cfg.monte_carlo
    step = mc.refine_step_db
    me = max(mc.min_errors, mc.refine_min_errors)
    lo, hi = min(cfg.esn0_grid_db), max(cfg.esn0_grid_db)
    consts = [build_constellation(s) for s in cfg.constellations]
    points: list[SerPoint] = []
    for i, c in enumerate(consts):
        x0 = round(union_bound_crossing(c, cfg.target_ser, lo, hi) / step) * step
        mine = {p.esn0_db: p for p in _simulate_points(consts, [(i, x0 - step, me, True), (i, x0, me, True)], cfg, jobs)}
        while min(p.estimate.ser for p in mine.values()) >= cfg.target_ser and max(mine) < hi + 5:
            x = round(max(mine) + step, 10)
            mine[x] = _simulate_points(consts, [(i, x, me, True)], cfg, 1)[0]
        while max(p.estimate.ser for p in mine.values()) <= cfg.target_ser and min(mine) > lo - 5:
            x = round(min(mine) - step, 10)
            mine[x] = _simulate_points(consts, [(i, x, me, True)], cfg, 1)[0]
        points += [mine[x] for x in sorted(mine)]
    return points


def run_gain_at_threshold(cfg: ExperimentConfig, jobs: int = 1) -> tuple[list[SerPoint], Optional[GainReport]]:
    points = simulate_threshold(cfg, jobs)
    return points, gains_from_points(cfg, points)


# ---------------------------------------------------------------------------
# PAPR table and jitter
# ---------------------------------------------------------------------------

ALT_LABEL = "bi-orthogonal alt."


def run_papr_table(cfg: ExperimentConfig) -> list[tuple[str, PaprReport]]:
    p = cfg.papr
    protocol = PaprProtocol(p.n_symbols, PulseShape("RRC", p.rolloff, p.span, p.samples_per_symbol))
    rows = []
    for spec in cfg.constellations:
        c = build_constellation(spec)
        rows.append((c.name, c, False))
        if p.include_alternating and spec.get("kind") == "biortho":
            rows.append((ALT_LABEL, c, True))
    return [
        (name, papr_report(c, protocol, RngStream(cfg.seed, k), alternating=alt))
        for k, (name, c, alt) in enumerate(rows)
    ]


def jitter_grid(cfg: ExperimentConfig) -> list[TimingLoopConfig]:
    j = cfg.jitter
    return [
        TimingLoopConfig(
            loop_bandwidth_norm=j.bn_t, mode=PolMode(mode), prefilter=pre, rolloff=j.rolloff, sps=j.sps,
            esn0_db=x, settle_symbols=j.settle_symbols, measure_symbols=j.measure_symbols, tau_true=j.tau_true,
        )
        for pre in j.prefilter
        for mode in j.modes
        for x in cfg.esn0_grid_db
    ]


def _jitter_task(args):
    tcfg, seed, xi = args
    return jitter_curve([tcfg], seed, xi)[0]


def run_jitter(cfg: ExperimentConfig, jobs: int = 1) -> list[JitterRow]:
    xi = cfg.jitter.xi if cfg.jitter.xi is not None else xi_rrc(cfg.jitter.rolloff)
    return _map(_jitter_task, [(t, cfg.seed, xi) for t in jitter_grid(cfg)], jobs)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, figures: bool = True) -> RunResult:
    """Run ``cfg`` and write its outputs into ``cfg.output_dir``.

    Files are first written to a staging directory next to the target and
    moved into place only when the run finishes; an exception leaves no
    partial files behind. Underresolved points and unbracketed comparisons
    are not exceptions: their data is written and flagged in ``summary.json``.
    """
    out = Path(cfg.output_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}-partial-", dir=out.parent))
    result = RunResult(cfg)
    try:
        kind = cfg.experiment
        if kind in (ExperimentKind.SER_SWEEP, ExperimentKind.GAIN_AT_THRESHOLD):
            sim = simulate_sweep if kind is ExperimentKind.SER_SWEEP else simulate_threshold
            result.points = sim(cfg, jobs)
            try:
                result.gains = gains_from_points(cfg, result.points)
            except NoBracket as exc:
                log.warning("%s", exc)
                result.failures.append(str(exc))
        elif kind is ExperimentKind.PAPR_TABLE:
            result.papr = run_papr_table(cfg)
            result.peaks = [
                (c.name, *peak_constraint(c).values()) for c in map(build_constellation, cfg.constellations)
            ]
        elif kind is ExperimentKind.JITTER_SWEEP:
            result.jitter = run_jitter(cfg, jobs)
        else:
            for spec in cfg.constellations:
                c = build_constellation(spec)
                write_constellation(c, stage / (report.slug(c.name) + ".txt"))
        report.write_outputs(result, stage, figures=figures)
        out.mkdir(parents=True, exist_ok=True)
        for f in sorted(stage.iterdir()):
            target = out / f.name
            shutil.move(str(f), str(target))
            result.files.append(target)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return result
