# flowfront/services/storage.py
from __future__ import annotations
from pathlib import Path
import hashlib
import io
import json
import os
import tempfile
from typing import Any, Dict, Iterable

import numpy as np
import pandas as pd

from flowfront.errors import ConfigError
from flowfront.services.pde_sim import FrontSeries, sensor_columns

FLOAT_FORMAT = "%.9g"
NA_REP = "NaN"

def ensure_dir(p: Path) -> None:
    p.mkdir(parents=True, exist_ok=True)

# ---------- File ops ----------

def write_text(path: Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see half a file."""
    path = Path(path)
    ensure_dir(path.parent)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise

def write_json(path: Path, obj: Dict[str, Any]) -> None:
    write_text(path, json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n")

def read_json(path: Path) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}", [f"/: line {e.lineno} column {e.colno}: {e.msg}"]) from e

def sha256_file(path: Path, chunk_size: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            h.update(chunk)
    return h.hexdigest()

def write_frame_csv(path: Path, df: pd.DataFrame) -> None:
    buf = io.StringIO()
    df.to_csv(buf, index=False, float_format=FLOAT_FORMAT, na_rep=NA_REP, lineterminator="\n")
    write_text(path, buf.getvalue())

# ---------- Front series ----------

def front_frame(series: FrontSeries) -> pd.DataFrame:
    data = {"t": series.times}
    for k in range(series.n_lines):
        data[f"line_{k}"] = series.fronts[:, k]
    return pd.DataFrame(data)

def write_front_csv(series: FrontSeries, path: Path) -> None:
    """Header t,line_0,...; line_k is the k-th line (0-based), NaN for missing entries."""
    write_frame_csv(path, front_frame(series))

def read_front_csv(path: Path, *, Ly: float, nx: int) -> FrontSeries:
    """Inverse of write_front_csv. Lines sit on sensor_columns(nx, n) unless there are nx+1 of them."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    df = pd.read_csv(path)
    expected = ["t"] + [f"line_{k}" for k in range(len(df.columns) - 1)]
    if list(df.columns) != expected or len(df.columns) < 3:
        raise ConfigError(
            f"unexpected header in {path}",
            [f"/columns: expected t,line_0,...,line_<n-1> with n >= 2, got {','.join(map(str, df.columns))}"],
        )
    if df.empty:
        raise ConfigError(f"no rows in {path}")
    n = len(df.columns) - 1
    if n > nx + 1:
        raise ConfigError(f"{path} has {n} lines but the grid has only {nx + 1} columns")
    columns = np.arange(nx + 1) if n == nx + 1 else sensor_columns(nx, n)
    return FrontSeries(
        times=df["t"].to_numpy(dtype=float),
        fronts=df.iloc[:, 1:].to_numpy(dtype=float),
        Ly=Ly,
        nx=nx,
        columns=columns,
    )

# ---------- Manifest ----------

def write_manifest(out_dir: Path, config: Dict[str, Any], files: Iterable[Path]) -> Path:
    """manifest.json next to the outputs: resolved config plus sha256 per file (no timestamps)."""
    out_dir = Path(out_dir)
    manifest: Dict[str, Any] = {
        "config": config,
        "files": {Path(p).relative_to(out_dir).as_posix(): sha256_file(p) for p in sorted(files)},
    }
    path = out_dir / "manifest.json"
    write_json(path, manifest)
    return path
