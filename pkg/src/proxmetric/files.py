"""Plain-text artifact formats: dataset files and plot-ready CSVs.

Every file starts with ``#`` comment lines (metadata and the config hash)
followed by one header row.  Floats are written with ``repr`` so a read
back gives the identical double.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .training import ParamDataset


class MissingArtifactError(FileNotFoundError):
    pass


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows, comments=(), trailer=()):
    """Write ``rows`` under ``header``; ``comments`` go before the header, ``trailer`` after the rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    for c in trailer:
        buf.write(f"# {c}\n")
    path.write_text(buf.getvalue())
    return path


def read_csv(path):
    """Return ``(comments, header, rows)`` with rows as lists of strings."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing file {path}")
    comments, data = [], []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif line.strip():
            data.append(line)
    rows = list(csv.reader(data))
    if not rows:
        raise ValueError(f"{path}: no header row")
    return comments, rows[0], rows[1:]


def _meta_line(meta):
    return ",".join(f"{k}={v}" for k, v in meta.items())


def _parse_meta(line):
    out = {}
    for part in line.split(","):
        key, sep, val = part.partition("=")
        if sep:
            out[key.strip()] = val.strip()
    return out


def write_dataset(path, ds: ParamDataset, config_hash: str):
    meta = {"family": ds.family, "n": ds.n, "v": ds.v, "seed": ds.seed, "split": ds.split}
    header = [f"p{i + 1}" for i in range(ds.v)] + [f"x{i + 1}" for i in range(ds.n)]
    rows = (list(p) + list(x) for p, x in zip(ds.params, ds.targets))
    return write_csv(path, header, rows, [_meta_line(meta), f"config_hash={config_hash}"])


def read_dataset(path) -> ParamDataset:
    comments, header, rows = read_csv(path)
    meta = {}
    for c in comments:
        meta.update(_parse_meta(c))
    try:
        n, v = int(meta["n"]), int(meta["v"])
    except (KeyError, ValueError):
        raise ValueError(f"{path}: dataset header lacks n and v") from None
    if len(header) != n + v:
        raise ValueError(f"{path}: expected {n + v} columns, found {len(header)}")
    arr = np.array(rows, dtype=float).reshape(len(rows), n + v)
    return ParamDataset(arr[:, :v].copy(), arr[:, v:].copy(), meta.get("split", ""),
                        meta.get("family", ""), int(meta.get("seed", 0)))
