"""Flat-file outputs: CSV tables and JSON-lines records, each with a provenance header."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .pathmetric import CadlagPath


def header_line(cfg) -> str:
    return f"# rwre-lab config={cfg.hash} seed={cfg.seed}"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], cfg) -> Path:
    """CSV with a '#' provenance line, then the header row, then the data."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(header_line(cfg) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """(columns, rows) of a CSV written by ``write_csv`` (comment lines skipped)."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        cols = next(reader)
    except StopIteration:
        raise ValueError(f"{path}: empty table") from None
    return cols, [r for r in reader if r]


def write_jsonl(path, records: Iterable[dict], cfg) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(json.dumps({"config": cfg.hash, "seed": cfg.seed}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, allow_nan=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# path files: one row per breakpoint, grouped by path id


PATH_COLUMNS = ("path", "kind", "t", "left", "right")


def path_rows(paths: Sequence[CadlagPath]):
    for i, p in enumerate(paths):
        for t, l, r in zip(p.t, p.left, p.right):
            yield (i, p.kind, float(t), float(l), float(r))


def write_paths(path, paths: Sequence[CadlagPath], cfg) -> Path:
    return write_csv(path, PATH_COLUMNS, path_rows(paths), cfg)


def read_paths(path) -> list[CadlagPath]:
    cols, rows = read_csv(path)
    if tuple(cols) != PATH_COLUMNS:
        raise ValueError(f"{path}: not a path file (columns {cols})")
    groups: dict[int, list] = {}
    kinds: dict[int, str] = {}
    try:
        for r in rows:
            i = int(r[0])
            kinds[i] = r[1]
            groups.setdefault(i, []).append((float(r[2]), float(r[3]), float(r[4])))
    except (ValueError, IndexError) as e:
        raise ValueError(f"{path}: malformed path row") from e
    out = []
    for i in sorted(groups):
        a = np.array(groups[i])
        out.append(CadlagPath(a[:, 0], a[:, 1], a[:, 2], kinds[i]))
    return out


def write_svg(path, draw, title: Optional[str] = None) -> Path:
    """Render a matplotlib figure to SVG; ``draw(ax)`` fills the axes."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "rwre-lab"
    fig, ax = plt.subplots(figsize=(6, 4))
    draw(ax)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
