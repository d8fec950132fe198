"""
Sample-level dual-polarization baseband synthesis and PAPR measurement.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.signal import oaconvolve

from .channel import RngStream
from .constellations import Constellation, biorthogonal_subsets, generate_classic_dual


class PulseKind(str, enum.Enum):
    RRC = "RRC"
    RC = "RC"


def rc_pulse(t: np.ndarray, alpha: float) -> np.ndarray:
    """Raised-cosine impulse response, ``t`` in symbol periods, g(0) = 1."""
    t = np.asarray(t, dtype=float)
    den = 1 - (2 * alpha * t) ** 2
    sing = np.abs(den) < 1e-10
    safe = np.where(sing, 1.0, den)
    h = np.sinc(t) * np.cos(np.pi * alpha * t) / safe
    # limit at t = +-1/(2 alpha)
    return np.where(sing, np.pi / 4 * np.sinc(1 / (2 * alpha)), h)


def rrc_pulse(t: np.ndarray, alpha: float) -> np.ndarray:
    """Root-raised-cosine impulse response, ``t`` in symbol periods (unnormalized)."""
    t = np.asarray(t, dtype=float)
    a = alpha
    out = np.empty_like(t)
    at0 = np.abs(t) < 1e-10
    sing = np.abs(np.abs(t) - 1 / (4 * a)) < 1e-10
    reg = ~(at0 | sing)
    tr = t[reg]
    num = np.sin(np.pi * tr * (1 - a)) + 4 * a * tr * np.cos(np.pi * tr * (1 + a))
    out[reg] = num / (np.pi * tr * (1 - (4 * a * tr) ** 2))
    out[at0] = 1 - a + 4 * a / np.pi
    out[sing] = a / math.sqrt(2) * (
        (1 + 2 / np.pi) * math.sin(np.pi / (4 * a)) + (1 - 2 / np.pi) * math.cos(np.pi / (4 * a))
    )
    return out


@dataclass(frozen=True)
class PulseShape:
    kind: PulseKind = PulseKind.RRC
    rolloff: float = 0.20
    span: int = 32
    samples_per_symbol: int = 8

    def __post_init__(self):
        object.__setattr__(self, "kind", PulseKind(self.kind))
        if not 0 < self.rolloff <= 1:
            raise ValueError("rolloff must lie in (0, 1]")
        if self.samples_per_symbol < 2:
            raise ValueError("samples_per_symbol must be >= 2")
        if self.span < 1:
            raise ValueError("span must be >= 1")

    @property
    def delay(self) -> int:
        """Group delay in samples."""
        return self.span * self.samples_per_symbol // 2

    def taps(self, shift: float = 0.0) -> np.ndarray:
        """Filter taps; RRC has unit energy, RC has unit peak.

        ``shift`` delays the pulse by a fraction of a symbol period.
        """
        sps = self.samples_per_symbol
        n = np.arange(-self.delay, self.delay + 1)
        t = n / sps - shift
        if self.kind is PulseKind.RC:
            return rc_pulse(t, self.rolloff)
        h = rrc_pulse(t, self.rolloff)
        return h / math.sqrt(np.sum(rrc_pulse(n / sps, self.rolloff) ** 2))


@dataclass(frozen=True, eq=False)
class DualWaveform:
    x: np.ndarray
    y: np.ndarray
    samples_per_symbol: int

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError("both polarizations must have equal length")

    def __len__(self):
        return len(self.x)


def shape_symbols(elements: np.ndarray, taps: np.ndarray, sps: int) -> np.ndarray:
    """Upsample one complex symbol stream and filter it; sample k*sps is symbol k."""
    up = np.zeros(len(elements) * sps, dtype=complex)
    up[::sps] = elements
    delay = (len(taps) - 1) // 2
    full = oaconvolve(up, taps)
    return full[delay : delay + len(up)]


def shape_waveform(c: Constellation, symbols, pulse: PulseShape = PulseShape()) -> DualWaveform:
    """Pulse-shape a sequence of constellation indices on both polarizations."""
    idx = np.asarray(symbols, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= len(c)):
        raise IndexError("symbol index outside the constellation")
    taps = pulse.taps()
    sps = pulse.samples_per_symbol
    return DualWaveform(shape_symbols(c.cx[idx], taps, sps), shape_symbols(c.cy[idx], taps, sps), sps)


class PaprPair(NamedTuple):
    combined: float
    single: float


@dataclass(frozen=True)
class PaprReport:
    combined_symbol: float
    single_symbol: float
    combined_shaped: float
    single_shaped: float


def _ratio(p: np.ndarray) -> float:
    return float(p.max() / p.mean())


def measure_papr(obj, trim: int = 0) -> PaprPair:
    """Combined and single-carrier peak-to-average power ratios (linear).

    For a :class:`Constellation` the points are weighted equally; for a
    :class:`DualWaveform` ``trim`` samples are dropped at both ends to skip
    filter ramp-up.
    """
    if isinstance(obj, Constellation):
        px, py = np.abs(obj.cx) ** 2, np.abs(obj.cy) ** 2
    else:
        sl = slice(trim, len(obj) - trim if trim else None)
        px, py = np.abs(obj.x[sl]) ** 2, np.abs(obj.y[sl]) ** 2
    if px.size == 0:
        raise ValueError("empty input")
    return PaprPair(_ratio(px + py), max(_ratio(px), _ratio(py)))


def biorthogonal_alt_sequence(n_symbols: int, rng=RngStream(0)):
    """Bi-orthogonal symbols whose half of dual QPSK flips every symbol.

    Returns ``(indices, dual_qpsk, (even_set, odd_set))``; ``indices`` address
    the 16-point dual QPSK constellation, even positions drawing from the kept
    half and odd positions from its complement.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    qpsk = generate_classic_dual("QPSK")
    even, odd = biorthogonal_subsets()
    pick = gen.integers(0, 8, size=n_symbols)
    idx = np.where(np.arange(n_symbols) % 2 == 0, even[pick], odd[pick])
    sets = (
        Constellation(qpsk.points[even], "bi-orthogonal"),
        Constellation(qpsk.points[odd], "bi-orthogonal complement"),
    )
    return idx, qpsk, sets


@dataclass(frozen=True)
class PaprProtocol:
    """How shaped PAPR is measured: i.i.d. uniform symbols through the transmit RRC."""

    n_symbols: int = 200_000
    pulse: PulseShape = PulseShape()


def papr_report(
    c: Constellation,
    protocol: PaprProtocol = PaprProtocol(),
    rng=RngStream(0),
    alternating: bool = False,
) -> PaprReport:
    """Symbol-level and pulse-shaped PAPR for one table row.

    ``alternating=True`` treats ``c`` as ignored and measures the
    set-flipping bi-orthogonal variant.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if alternating:
        idx, base, (even_set, _) = biorthogonal_alt_sequence(protocol.n_symbols, gen)
        sym = measure_papr(even_set)
    else:
        base = c
        idx = gen.integers(0, len(c), size=protocol.n_symbols)
        sym = measure_papr(c)
    w = shape_waveform(base, idx, protocol.pulse)
    shaped = measure_papr(w, trim=protocol.pulse.span * protocol.pulse.samples_per_symbol)
    return PaprReport(sym.combined, sym.single, shaped.combined, shaped.single)


def peak_constraint(c: Constellation) -> dict[str, float]:
    """Peak energy under separate per-carrier limits vs a shared dual-carrier limit.

    ``per_carrier`` is max(|cx|^2, |cy|^2) (needs Es,x, Es,y < Emax each);
    ``shared`` is max(|cx|^2 + |cy|^2) / 2 (needs Es,x + Es,y < 2 Emax).
    """
    px, py = np.abs(c.cx) ** 2, np.abs(c.cy) ** 2
    return {"per_carrier": float(max(px.max(), py.max())), "shared": float((px + py).max() / 2)}
