"""Figure output: gnuplot scripts with .dat files, plus PNGs when matplotlib is present.

The gnuplot pair needs nothing beyond the standard library; matplotlib is
imported only inside ``render_png``.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


def _fmt(v) -> str:
    v = float(v)
    return repr(v) if np.isfinite(v) else "NaN"


def write_dat(path, columns: list[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + " ".join(columns) + "\n")
        for row in rows:
            fh.write(" ".join(_fmt(v) for v in row) + "\n")
    return path


def write_gnuplot(outdir, stem: str, columns: list[str], rows, title: str, xlabel: str,
                  ylabel: str, logx: bool = False, logy: bool = True, fits: dict | None = None) -> tuple[Path, Path]:
    """``stem.dat`` (first column x) and ``stem.gp`` plotting every other column.

    ``fits`` maps a column name to ``(slope, intercept)`` of log y = a log x + c,
    drawn as a dashed line.
    """
    outdir = Path(outdir)
    dat = write_dat(outdir / f"{stem}.dat", columns, rows)
    lines = [
        f"# regenerate with: gnuplot {stem}.gp",
        "set terminal pngcairo size 900,600",
        f"set output '{stem}_gnuplot.png'",
        f"set title '{title}'",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        "set key outside right",
        "set grid",
    ]
    if logx:
        lines.append("set logscale x")
    if logy:
        lines.append("set logscale y")
    plots = [f"'{dat.name}' using 1:{i + 2} with linespoints title '{name}'"
             for i, name in enumerate(columns[1:])]
    for i, (name, (a, c)) in enumerate(sorted((fits or {}).items())):
        lines.append(f"f{i}(x) = exp({_fmt(c)}) * x**({_fmt(a)})")
        plots.append(f"f{i}(x) with lines dashtype 2 title 'fit {name}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    gp = outdir / f"{stem}.gp"
    gp.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return dat, gp


def render_png(outdir, stem: str, x, series: dict, title: str, xlabel: str, ylabel: str,
               logx: bool = False, logy: bool = True, fits: dict | None = None) -> Path | None:
    """Render the same figure with matplotlib; returns None if it is not installed."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not available; skipping %s.png", stem)
        return None
    x = np.asarray(x, dtype=float)
    fig, ax = plt.subplots(figsize=(7.5, 5.0))
    for name, y in series.items():
        y = np.asarray(y, dtype=float)
        keep = np.isfinite(y) & ((y > 0) if logy else True)
        ax.plot(x[keep], y[keep], marker="o", ms=3, lw=1.2, label=name)
    for name, (a, c) in (fits or {}).items():
        ax.plot(x, np.exp(c) * x ** a, ls="--", lw=1.0, color="0.3", label=f"fit {name}: slope {a:.3f}")
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(outdir) / f"{stem}.png"
    # no Software/date chunk so reruns give identical bytes
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def figure(outdir, stem: str, x, series: dict, title: str, xlabel: str, ylabel: str,
           logx: bool = False, logy: bool = True, fits: dict | None = None) -> list[Path]:
    """Both renderings of one figure; returns the files written."""
    names = list(series)
    rows = np.column_stack([np.asarray(x, float)] + [np.asarray(series[k], float) for k in names])
    out = list(write_gnuplot(outdir, stem, [xlabel.split()[0]] + names, rows, title, xlabel, ylabel,
                             logx, logy, fits))
    png = render_png(outdir, stem, x, series, title, xlabel, ylabel, logx, logy, fits)
    if png is not None:
        out.append(png)
    return out
