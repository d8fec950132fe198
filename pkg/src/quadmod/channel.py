"""
Symbol-level AWGN channel, maximum-likelihood detection and SER estimation.

All constellations are expected at unit average energy, so ``Es = 1`` and the
noise level follows from Es/N0 alone: each of the four real dimensions gets
variance ``N0 / 2``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import erfc, log_ndtr

from .constellations import Constellation, DetectionMode
from .errors import DomainError, MissingBits, NoBracket

# ---------------------------------------------------------------------------
# SNR bookkeeping
# ---------------------------------------------------------------------------


class SnrConvention(str, enum.Enum):
    SNR = "SNR"
    ESN0 = "EsN0"
    EBN0 = "EbN0"


@dataclass(frozen=True)
class SnrSpec:
    value: float  # dB
    convention: SnrConvention = SnrConvention.ESN0
    bits_per_symbol: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "convention", SnrConvention(self.convention))

    @property
    def linear(self) -> float:
        return 10 ** (self.value / 10)


def _factor_to_snr(convention: SnrConvention, bits: Optional[float]) -> float:
    """Linear factor k such that ``quantity = k * SNR``."""
    if convention is SnrConvention.SNR:
        return 1.0
    if convention is SnrConvention.ESN0:
        return 2.0
    if bits is None or bits <= 0:
        raise MissingBits("Eb/N0 needs a positive bits_per_symbol")
    return 2.0 / bits


def convert_snr(spec: SnrSpec, target) -> SnrSpec:
    """Convert between SNR = Es/(2 N0), Es/N0 and Eb/N0 (linear scale rules)."""
    target = SnrConvention(target)
    k_from = _factor_to_snr(spec.convention, spec.bits_per_symbol)
    k_to = _factor_to_snr(target, spec.bits_per_symbol)
    value = spec.value + 10 * math.log10(k_to / k_from)
    return SnrSpec(value, target, spec.bits_per_symbol)


def esn0_to_n0(esn0_db: float, es: float = 1.0) -> float:
    return es / 10 ** (esn0_db / 10)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Reproducible, independent random stream keyed by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, k: int) -> "RngStream":
        # stream ids are flat; children of stream s live at s * 2**20 + k
        return RngStream(self.seed, self.stream_id * (1 << 20) + k)


# ---------------------------------------------------------------------------
# Channel and detector
# ---------------------------------------------------------------------------


def awgn_transmit(c: Constellation, n_symbols: int, esn0_db: float, rng):
    """Draw uniform symbols, add complex AWGN at the given Es/N0.

    Returns ``(received, indices)`` with ``received`` of shape ``(n, 4)``.
    ``rng`` may be an :class:`RngStream` or a numpy ``Generator``.
    """
    if n_symbols < 1:
        raise ValueError("n_symbols must be >= 1")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    idx = gen.integers(0, len(c), size=n_symbols)
    tx = c.points[idx]
    if math.isinf(esn0_db) and esn0_db > 0:
        return tx.copy(), idx
    sigma = math.sqrt(c.avg_energy * esn0_to_n0(esn0_db) / 2)
    return tx + sigma * gen.standard_normal((n_symbols, 4)), idx


_CHUNK = 1 << 14


def _nearest(points: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Row-wise nearest point index; ``argmin`` keeps the lowest index on ties."""
    half_energy = 0.5 * np.einsum("ij,ij->i", points, points)
    out = np.empty(len(r), dtype=np.int64)
    for s in range(0, len(r), _CHUNK):
        # |r - p|^2 / 2 - |r|^2 / 2 = |p|^2 / 2 - r.p
        metric = half_energy - r[s : s + _CHUNK] @ points.T
        out[s : s + _CHUNK] = np.argmin(metric, axis=1)
    return out


def _as_real_pairs(z: np.ndarray) -> np.ndarray:
    return np.column_stack([z.real, z.imag])


def detect_ml(c: Constellation, received) -> np.ndarray | int:
    """Minimum-distance decision for one sample ``(4,)`` or a batch ``(n, 4)``."""
    r = np.asarray(received, dtype=float)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    if c.detection_mode is DetectionMode.PER_POL:
        ix = _nearest(_as_real_pairs(c.factor_x), r[:, :2])
        iy = _nearest(_as_real_pairs(c.factor_y), r[:, 2:])
        out = ix * len(c.factor_y) + iy
    else:
        out = _nearest(c.points, r)
    return int(out[0]) if single else out


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StopRule:
    min_errors: int = 200
    max_symbols: int = 200_000_000
    batch: int = 1 << 16


@dataclass(frozen=True)
class SerEstimate:
    errors: int
    trials: int

    @property
    def ser(self) -> float:
        return self.errors / self.trials if self.trials else 0.0

    @property
    def ci95_halfwidth(self) -> float:
        p = self.ser
        return 1.96 * math.sqrt(p * (1 - p) / self.trials) if self.trials else math.inf

    def underresolved(self, min_errors: int) -> bool:
        return self.errors < min_errors

    def __add__(self, other: "SerEstimate") -> "SerEstimate":
        return SerEstimate(self.errors + other.errors, self.trials + other.trials)


def merge_estimates(parts: Iterable[SerEstimate]) -> SerEstimate:
    return sum(parts, SerEstimate(0, 0))


def count_errors(c: Constellation, n_symbols: int, esn0_db: float, gen: np.random.Generator) -> int:
    received, idx = awgn_transmit(c, n_symbols, esn0_db, gen)
    return int(np.count_nonzero(detect_ml(c, received) != idx))


def simulate_ser(c: Constellation, esn0_db: float, stop: StopRule = StopRule(), rng=RngStream(0)) -> SerEstimate:
    """Run fixed-size batches until ``min_errors`` or ``max_symbols`` is reached.

    The batch sequence is fixed, so the result depends only on the inputs.
    Check :meth:`SerEstimate.underresolved` to see whether the error target
    was met.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    errors = trials = 0
    while errors < stop.min_errors and trials < stop.max_symbols:
        n = min(stop.batch, stop.max_symbols - trials)
        errors += count_errors(c, n, esn0_db, gen)
        trials += n
    return SerEstimate(errors, trials)


def simulate_ser_partitioned(
    c: Constellation, esn0_db: float, n_symbols: int, rng: RngStream, parts: int, batch: int = 1 << 16
) -> list[SerEstimate]:
    """Fixed-length run split over ``parts`` child streams (one per worker).

    Each child stream always produces the same batches, so merging any
    grouping of the returned partials gives the same total.
    """
    per = -(-n_symbols // parts)
    out = []
    for k in range(parts):
        gen = rng.child(k).generator()
        n = min(per, n_symbols - k * per)
        errs = 0
        for s in range(0, n, batch):
            errs += count_errors(c, min(batch, n - s), esn0_db, gen)
        out.append(SerEstimate(errs, n))
    return out


# ---------------------------------------------------------------------------
# Analytic pieces
# ---------------------------------------------------------------------------


def qfunc(x):
    """Gaussian tail Q(x) = P(N(0,1) > x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def log_qfunc(x):
    """ln Q(x), accurate far into the tail where Q underflows."""
    return log_ndtr(-np.asarray(x, dtype=float))


def union_bound(c: Constellation, esn0_db: float) -> float:
    """(1/M) sum_i sum_{j != i} Q(d_ij / (2 sigma)), sigma^2 = N0 / 2."""
    sigma = math.sqrt(c.avg_energy * esn0_to_n0(esn0_db) / 2)
    d = pdist(c.points)
    # each unordered pair counts twice
    return float(2.0 * qfunc(d / (2 * sigma)).sum() / len(c))


def dual_error_compose(p_single: float) -> float:
    """SER of a 2-D scheme run on both polarizations: 2p - p^2."""
    if not 0.0 <= p_single <= 1.0:
        raise DomainError(f"probability {p_single} outside [0, 1]")
    return 2 * p_single - p_single * p_single


def snr_at_ser(curve: Sequence[tuple[float, float]], target_ser: float = 1e-4, name: Optional[str] = None) -> float:
    """Es/N0 where a measured SER curve crosses ``target_ser``.

    Interpolates linearly in (dB, log10 SER) between the first pair of
    adjacent grid points that brackets the target. Zero-error points carry no
    log-domain information and are skipped.
    """
    pts = sorted((float(x), float(y)) for x, y in curve if y > 0)
    for x, y in pts:
        if y == target_ser:
            return x
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if y0 > target_ser > y1:
            t = (math.log10(target_ser) - math.log10(y0)) / (math.log10(y1) - math.log10(y0))
            return x0 + t * (x1 - x0)
    label = f" for {name}" if name else ""
    raise NoBracket(f"SER curve{label} does not cross {target_ser:g}", curve_name=name)
