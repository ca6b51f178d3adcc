"""Small CSV helpers shared by every emitter.

Floats are written with ``repr`` so files are byte-stable and round-trip
exactly. Every file ends with one ``#`` metadata comment line.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Sequence


def fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "dtype"):
        return repr(v.item())
    return str(v)


def metadata_line(meta: Mapping | None) -> str:
    meta = dict(meta or {})
    return "# " + " ".join(f"{k}={meta[k]}" for k in meta)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], meta: Mapping | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
        fh.write(metadata_line(meta) + "\n")
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and data rows; ``#`` comment lines are skipped."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return [h.strip() for h in rows[0]], rows[1:]
