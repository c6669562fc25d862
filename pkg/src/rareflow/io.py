"""Deterministic CSV/JSON writers and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def _cell(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with a header row; floats in shortest round-trip form."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) if not isinstance(v, str) else v for v in row])
    return path


def write_columns(path, columns: dict[str, np.ndarray]) -> Path:
    """Columns of equal length; integer arrays stay integers."""
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    n = arrays[0].shape[0]
    if any(a.shape[0] != n for a in arrays):
        raise ValueError("columns differ in length")
    ints = [np.issubdtype(a.dtype, np.integer) for a in arrays]
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([str(int(a[i])) if it else repr(float(a[i])) for a, it in zip(arrays, ints)])
    return Path(path)


def write_trajectory(path, times, states, modes) -> Path:
    """``t, x_1..x_p, mode`` with modes numbered from 1."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    cols = {"t": np.asarray(times, dtype=float)}
    for j in range(states.shape[1]):
        cols[f"x_{j + 1}"] = states[:, j]
    cols["mode"] = np.asarray(modes, dtype=np.int64) + 1
    return write_columns(path, cols)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(dumps(config).encode("utf-8")).hexdigest()


def versions() -> dict:
    import matplotlib
    import numba
    import pydantic
    import scipy

    from . import __version__

    return {"rareflow": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "matplotlib": matplotlib.__version__,
            "pydantic": pydantic.__version__}


def write_manifest(outdir, command: str, config: dict, seed: int, status: str = "complete",
                   error: str | None = None) -> Path:
    """Manifest listing every output file with its digest; no timestamps."""
    outdir = Path(outdir)
    files = {p.relative_to(outdir).as_posix(): file_digest(p)
             for p in sorted(outdir.rglob("*")) if p.is_file() and p.name != "manifest.json"}
    manifest = {"command": command, "config": config, "config_hash": config_hash(config), "seed": seed,
                "status": status, "versions": versions(), "files": files}
    if error is not None:
        manifest["error"] = error
    return write_json(outdir / "manifest.json", manifest)
