"""Static line plots of CSV curves (one figure per curve file)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import read_curve  # noqa: E402


_METADATA = {
    ".png": {"Software": None},
    ".svg": {"Date": None, "Creator": None},
    ".pdf": {"CreationDate": None, "Creator": None, "Producer": None},
}


def plot_curve(csv_path, out_path, title: str | None = None, logy: bool | None = None) -> Path:
    """First column is the x axis; every other column is drawn as a series."""
    header, rows = read_curve(csv_path)
    if len(header) < 2 or not rows:
        raise ValueError(f"{csv_path}: need a header with at least two columns and one row")
    data = np.array(rows, dtype=float)
    x = data[:, 0]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for j, name in enumerate(header[1:], start=1):
        ax.plot(x, data[:, j], label=name, lw=1.2)
    y = data[:, 1:]
    pos = y[np.isfinite(y)]
    if logy is None:
        logy = pos.size > 0 and np.all(pos > 0) and pos.max() / max(pos.min(), 1e-300) > 1e3
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(header[0])
    ax.set_title(title or Path(csv_path).stem, fontsize=9)
    if len(header) > 2:
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    # dropping timestamps and version strings keeps the output reproducible
    fig.savefig(out_path, dpi=100, metadata=_METADATA.get(out_path.suffix.lower(), {}))
    plt.close(fig)
    return out_path


def plot_directory(run_dir, fmt: str = "png") -> list[Path]:
    """Render ``run_dir/curves/*.csv`` into ``run_dir/figures``."""
    run_dir = Path(run_dir)
    out = []
    for csv_path in sorted((run_dir / "curves").glob("*.csv")):
        out.append(plot_curve(csv_path, run_dir / "figures" / f"{csv_path.stem}.{fmt}"))
    return out
