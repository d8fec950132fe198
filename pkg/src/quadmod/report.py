"""
Delimited outputs (CSV, gnuplot data) and matplotlib figures for experiment runs.
"""

from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .config import dump_config  # noqa: E402
from .sync import JITTER_COLUMNS  # noqa: E402

if TYPE_CHECKING:
    from .experiments import RunResult

SER_COLUMNS = ["constellation", "esn0_db", "ser", "errors", "trials", "ci95"]
GAIN_COLUMNS = ["constellation_a", "constellation_b", "esn0_a_db", "esn0_b_db", "ebn0_a_db", "ebn0_b_db",
                "gain_db", "gain_esn0_db"]
PAPR_COLUMNS = ["modulation", "symbol_combined", "symbol_single", "shaped_combined", "shaped_single"]

# keeps PNGs free of version strings and timestamps
_PNG_META = {"Software": None}


def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "-", name).strip("-").lower()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# SER
# ---------------------------------------------------------------------------


def ser_rows(points):
    return [
        (p.constellation, p.esn0_db, p.estimate.ser, p.estimate.errors, p.estimate.trials, p.estimate.ci95_halfwidth)
        for p in points
    ]


def write_ser_dat(path: Path, points) -> None:
    """gnuplot data: one index block per constellation, blocks separated by two blank lines."""
    blocks: dict[str, list] = {}
    for p in points:
        blocks.setdefault(p.constellation, []).append(p)
    lines = ["# esn0_db ebn0_db ser ci95 union_bound errors trials"]
    for name, pts in blocks.items():
        lines.append(f'# "{name}" bits_per_symbol={pts[0].bits_per_symbol!r}')
        for p in pts:
            e = p.estimate
            lines.append(
                f"{p.esn0_db!r} {p.ebn0_db!r} {e.ser!r} {e.ci95_halfwidth!r} {p.union_bound!r} {e.errors} {e.trials}"
            )
        lines += ["", ""]
    path.write_text("\n".join(lines) + "\n")


def plot_ser(path: Path, points, target_ser: float, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    blocks: dict[str, list] = {}
    for p in points:
        blocks.setdefault(p.constellation, []).append(p)
    for k, (name, pts) in enumerate(blocks.items()):
        color = f"C{k}"
        x = np.array([p.ebn0_db for p in pts])
        ser = np.array([p.estimate.ser for p in pts])
        ub = np.array([p.union_bound for p in pts])
        shown = ser > 0
        ax.semilogy(x[shown], ser[shown], "o-", color=color, ms=3.5, label=f"{name} (sim)")
        ax.semilogy(x, np.minimum(ub, 1.0), "--", color=color, lw=0.9, label=f"{name} (UB)")
    ax.axhline(target_ser, color="0.5", lw=0.6, ls=":")
    ax.set_xlabel(r"$E_b/N_0$ [dB]")
    ax.set_ylabel("SER")
    ax.set_ylim(1e-6, 1)
    ax.grid(True, which="both", lw=0.3)
    ax.legend(fontsize=7)
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


# ---------------------------------------------------------------------------
# PAPR / jitter / constellations
# ---------------------------------------------------------------------------


def papr_rows(papr):
    return [
        (name, *(f"{v:.2f}" for v in (r.combined_symbol, r.single_symbol, r.combined_shaped, r.single_shaped)))
        for name, r in papr
    ]


def plot_papr(path: Path, papr) -> None:
    names = [n for n, _ in papr]
    y = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    ax.barh(y - 0.2, [r.combined_shaped for _, r in papr], height=0.4, label="combined")
    ax.barh(y + 0.2, [r.single_shaped for _, r in papr], height=0.4, label="single carrier")
    ax.set_yticks(y, names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel(r"PAPR (linear), RRC $\alpha=0.20$")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_jitter(path: Path, rows) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r.mode.value, r.prefilter), []).append(r)
    for k, ((mode, pre), rs) in enumerate(sorted(groups.items())):
        rs = sorted(rs, key=lambda r: r.esn0_db)
        label = f"{mode}{' + prefilter' if pre else ''}"
        ax.semilogy([r.esn0_db for r in rs], [r.variance_norm for r in rs], "o-", ms=3.5, color=f"C{k}", label=label)
    for mode, ls in (("SinglePol", "--"), ("DualPol", ":")):
        rs = sorted({r.esn0_db: r for r in rows if r.mode.value == mode}.values(), key=lambda r: r.esn0_db)
        if rs:
            ax.semilogy([r.esn0_db for r in rs], [r.mcrb_norm for r in rs], ls, color="k", lw=0.9, label=f"MCRB {mode}")
    ax.set_xlabel(r"$E_s/N_0$ [dB]")
    ax.set_ylabel(r"var$(\hat\tau/T)$")
    ax.grid(True, which="both", lw=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_projection(path: Path, c) -> None:
    from .constellations import project_constituents

    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    for ax, (elems, counts), pol in zip(axes, project_constituents(c), "XY"):
        ax.scatter(elems.real, elems.imag, s=10)
        if len(elems) <= 64:
            for z, n in zip(elems, counts):
                ax.annotate(str(n), (z.real, z.imag), fontsize=6, xytext=(2, 2), textcoords="offset points")
        ax.set_aspect("equal")
        ax.set_title(f"{c.name}: pol {pol}", fontsize=9)
        ax.grid(True, lw=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


# ---------------------------------------------------------------------------


def summary(result: "RunResult") -> dict:
    cfg = result.config
    out = {"name": cfg.name, "experiment": cfg.experiment.value, "seed": cfg.seed}
    if result.points:
        under = [(p.constellation, p.esn0_db) for p in result.points if p.underresolved]
        out["underresolved"] = [{"constellation": n, "esn0_db": x} for n, x in under]
    if result.failures:
        out["failed_comparisons"] = list(result.failures)
    if result.gains is not None:
        out["target_ser"] = result.gains.target_ser
        out["gains"] = [
            {"a": g.constellation_a, "b": g.constellation_b, "gain_db": g.gain_db, "gain_esn0_db": g.gain_esn0_db}
            for g in result.gains.pairs
        ]
    if result.jitter:
        out["lock_lost"] = [r.as_dict() for r in result.jitter if not r.lock_flag]
    return out


def write_outputs(result: "RunResult", directory: Path, figures: bool = True) -> None:
    cfg = result.config
    d = Path(directory)
    (d / "config.toml").write_text(dump_config(cfg))
    if result.points:
        write_csv(d / "ser.csv", SER_COLUMNS, ser_rows(result.points))
        write_ser_dat(d / "ser.dat", result.points)
        if figures:
            plot_ser(d / "ser.png", result.points, cfg.target_ser, cfg.name)
    if result.gains is not None:
        write_csv(
            d / "gains.csv",
            GAIN_COLUMNS,
            [
                (g.constellation_a, g.constellation_b, g.esn0_a_db, g.esn0_b_db, g.ebn0_a_db, g.ebn0_b_db,
                 g.gain_db, g.gain_esn0_db)
                for g in result.gains.pairs
            ],
        )
    if result.papr:
        write_csv(d / "papr.csv", PAPR_COLUMNS, papr_rows(result.papr))
        write_csv(d / "peak_constraint.csv", ["modulation", "per_carrier_peak", "shared_peak"], result.peaks)
        if figures:
            plot_papr(d / "papr.png", result.papr)
    if result.jitter:
        rows = [r.as_dict() for r in result.jitter]
        write_csv(d / "jitter.csv", JITTER_COLUMNS, [[r[k] for k in JITTER_COLUMNS] for r in rows])
        lines = ["# " + " ".join(JITTER_COLUMNS)] + [" ".join(_fmt(r[k]) for k in JITTER_COLUMNS) for r in rows]
        (d / "jitter.dat").write_text("\n".join(lines) + "\n")
        if figures:
            plot_jitter(d / "jitter.png", result.jitter)
    if cfg.experiment.value == "ConstellationExport" and figures:
        from .config import build_constellation

        for spec in cfg.constellations:
            c = build_constellation(spec)
            plot_projection(d / (slug(c.name) + ".png"), c)
    (d / "summary.json").write_text(json.dumps(summary(result), indent=2, sort_keys=True) + "\n")
