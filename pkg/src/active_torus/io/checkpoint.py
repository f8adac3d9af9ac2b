"""
Binary checkpoints of a model state.

Layout (little-endian throughout):

    magic    6 bytes   b"TAFv1\\0"
    dims     3 x u32   nx, ny, ntheta
    time     f64
    step     u64
    values   nx * ny * ntheta x f64, x fastest (Fortran order)
"""

import hashlib
import os
import struct
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel

from ..core.spectral import TorusGrid
from ..core.state import ModelState
from ..core.types import ActiveTorusError, CheckpointError
from ..logging_setup import get_logger

logger = get_logger("checkpoint")

MAGIC = b"TAFv1\0"
HEADER = struct.Struct("<6s3IdQ")
VALUE_DTYPE = np.dtype("<f8")

PathLike = Union[str, Path]


def encode_state(state: ModelState) -> bytes:
    grid = state.grid
    header = HEADER.pack(MAGIC, grid.nx, grid.ny, grid.ntheta, float(state.t), int(state.step))
    payload = np.asarray(state.f.values, dtype=VALUE_DTYPE).ravel(order="F").tobytes()
    return header + payload


def save_checkpoint(state: ModelState, path: PathLike) -> Path:
    """Write atomically: the file either holds the complete state or is untouched."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as handle:
        handle.write(encode_state(state))
        handle.flush()
        os.fsync(handle.fileno())
    os.replace(tmp, path)
    logger.debug("checkpoint written", extra={"data": {"path": str(path), "step": state.step}})
    return path


def decode_state(blob: bytes, grid: Optional[TorusGrid] = None, source: str = "<bytes>") -> ModelState:
    if len(blob) < HEADER.size:
        raise CheckpointError(
            f"{source}: truncated checkpoint, expected at least {HEADER.size} bytes, got {len(blob)}"
        )
    magic, nx, ny, ntheta, t, step = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = HEADER.size + nx * ny * ntheta * VALUE_DTYPE.itemsize
    if len(blob) != expected:
        raise CheckpointError(
            f"{source}: truncated checkpoint, expected {expected} bytes, got {len(blob)}"
        )
    if grid is not None and (nx, ny, ntheta) != grid.shape:
        raise CheckpointError(
            f"{source}: grid {nx}x{ny}x{ntheta} does not match configured "
            + "x".join(str(n) for n in grid.shape)
        )
    try:
        stored = TorusGrid.create(nx, ny, ntheta)
        values = np.frombuffer(blob, dtype=VALUE_DTYPE, offset=HEADER.size)
        return ModelState.from_values(
            stored, values.reshape((nx, ny, ntheta), order="F"), t=t, step=step
        )
    except ActiveTorusError as exc:
        raise CheckpointError(f"{source}: {exc}") from exc


def load_checkpoint(path: PathLike, grid: Optional[TorusGrid] = None) -> ModelState:
    """Read a checkpoint; ``grid`` additionally checks the stored dimensions."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_state(blob, grid, source=str(path))


def payload_digest(path: PathLike) -> str:
    """SHA-256 of the value block, independent of the header."""
    blob = Path(path).read_bytes()
    return hashlib.sha256(blob[HEADER.size :]).hexdigest()


class CheckpointInfo(BaseModel):
    path: str
    dims: List[int]
    t: float
    step: int
    mass: float
    min_f: float
    max_rho: float
    payload_sha256: str


def describe_checkpoint(path: PathLike) -> CheckpointInfo:
    state = load_checkpoint(path)
    return CheckpointInfo(
        path=str(path),
        dims=list(state.grid.shape),
        t=state.t,
        step=state.step,
        mass=state.mass,
        min_f=float(np.min(state.f.values)),
        max_rho=float(np.max(state.rho.values)),
        payload_sha256=payload_digest(path),
    )
