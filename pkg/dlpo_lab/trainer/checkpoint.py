"""Binary parameter checkpoints with a JSON sidecar.

Layout (little-endian): magic ``b"DLPO"``, format version ``u32``, parameter count
``u64``, then the raw float64 parameters. The sidecar ``<checkpoint>.json`` records
the network dimensions, the SHA-256 of the run config, the step and the
validation score. Both files are written to a temporary file first and renamed
into place.
"""

import json
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from dlpo_lab.diffusion.denoiser import DenoiserLayout, DenoiserParams
from dlpo_lab.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"DLPO"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIQ")

PathLike = Union[str, Path]


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_checkpoint(path: PathLike, params: DenoiserParams, meta: Optional[dict[str, Any]] = None) -> Path:
    path = Path(path)
    theta = np.ascontiguousarray(params.theta, dtype="<f8")
    _atomic_write(path, HEADER.pack(MAGIC, FORMAT_VERSION, theta.size) + theta.tobytes())
    sidecar = {"format_version": FORMAT_VERSION, "layout": params.layout.model_dump(), **(meta or {})}
    _atomic_write(sidecar_path(path), (json.dumps(sidecar, indent=2, sort_keys=True) + "\n").encode())
    logger.debug("Wrote checkpoint %s", path)
    return path


def read_theta(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    body = data[HEADER.size :]
    if len(body) != 8 * count:
        raise CheckpointError(f"{path}: header promises {count} parameters, file holds {len(body) / 8:g}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)


def read_sidecar(path: PathLike) -> dict[str, Any]:
    side = sidecar_path(path)
    if not side.exists():
        return {}
    try:
        return json.loads(side.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{side}: {exc}") from None


def load_checkpoint(path: PathLike, layout: DenoiserLayout) -> DenoiserParams:
    """Parameters for ``layout``; the count (and sidecar layout, when present) must match."""
    theta = read_theta(path)
    if theta.size != layout.size:
        raise CheckpointError(f"{path}: holds {theta.size} parameters, layout needs {layout.size}")
    recorded = read_sidecar(path).get("layout")
    if recorded is not None and DenoiserLayout(**recorded) != layout:
        raise CheckpointError(f"{path}: written for layout {recorded}, not {layout.model_dump()}")
    if not np.all(np.isfinite(theta)):
        raise CheckpointError(f"{path}: non-finite parameters")
    return DenoiserParams(layout=layout, theta=theta)


def remove_checkpoint(path: PathLike) -> None:
    for target in (Path(path), sidecar_path(path)):
        if target.exists():
            target.unlink()
