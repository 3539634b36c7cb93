"""Checkpoint directory format.

A checkpoint is a directory holding a plain-text header plus one raw
little-endian array file per named tensor. The header lists sorted
``key=value`` metadata and one ``array.<name>=<dtype>:<shape>:<file>``
line per array, so a save -> load -> save round trip is byte-identical.

Model parameters are float32 (their in-memory dtype); auxiliary state such
as the mean-latent codes keeps its native dtype, recorded per array in the
header.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

FORMAT_VERSION = "1"

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(RuntimeError):
    pass


def _filename(index: int) -> str:
    return f"arr_{index:05d}.bin"


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write arrays + metadata; keys are emitted sorted for determinism."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    lines = [f"format_version={FORMAT_VERSION}"]
    for key in sorted(meta):
        if key == "format_version":
            continue
        lines.append(f"{key}={meta[key]}")
    for index, name in enumerate(sorted(arrays)):
        arr = np.ascontiguousarray(arrays[name])
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported array dtype {dtype} for {name!r}")
        fname = _filename(index)
        shape = ",".join(map(str, arr.shape)) or "scalar"
        lines.append(f"array.{name}={dtype}:{shape}:{fname}")
        arr.astype(_DTYPES[dtype]).tofile(root / fname)
    (root / "header.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    root = Path(path)
    header = root / "header.txt"
    if not header.is_file():
        raise CheckpointError(f"no checkpoint header at {header}")
    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    for line in header.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key == "format_version":
            if value != FORMAT_VERSION:
                raise CheckpointError(
                    f"checkpoint format version {value!r} unsupported "
                    f"(this build reads version {FORMAT_VERSION!r})"
                )
            meta[key] = value
        elif key.startswith("array."):
            name = key[len("array.") :]
            try:
                dtype, shape_s, fname = value.split(":")
            except ValueError as exc:
                raise CheckpointError(f"malformed array line for {name!r}") from exc
            shape = () if shape_s == "scalar" else tuple(int(v) for v in shape_s.split(","))
            fpath = root / fname
            if not fpath.is_file():
                raise CheckpointError(f"missing array file {fname} for {name!r}")
            count = int(np.prod(shape)) if shape else 1
            raw = np.fromfile(fpath, dtype=_DTYPES[dtype])
            if raw.size != count:
                raise CheckpointError(
                    f"array {name!r} truncated: expected {count} values, got {raw.size}"
                )
            arrays[name] = raw.astype(dtype).reshape(shape)
        else:
            meta[key] = value
    if "format_version" not in meta:
        raise CheckpointError("checkpoint header missing format_version")
    return arrays, meta
