"""File formats and run manifests.

Binary files (shape banks, signals) are one line of JSON header followed by
little-endian float64 payload. Activations are CSV with header
``neuron,sample,amplitude``. Every CLI run writes a JSON manifest listing its
parameters and the sha256 of each output.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .operator import ActivationSet, MultiSignal, ShapeBank

FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


def _write_binary(path, header: dict, payload: np.ndarray):
    head = json.dumps(header, sort_keys=True).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(payload, dtype=_LE_F64).tobytes())


def _read_binary(path, kind: str, dims: tuple):
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: no header terminator found (byte 0..{len(raw)})")
    try:
        header = json.loads(raw[:nl].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        pos = getattr(exc, "pos", getattr(exc, "start", 0))
        raise FormatError(f"{path}: malformed header at byte {pos}: {exc}") from None
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header at byte 0 is not a JSON object")
    if header.get("format") != kind:
        raise FormatError(f"{path}: expected format {kind!r}, found {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')!r} (expected {FORMAT_VERSION})")
    for key in dims:
        v = header.get(key)
        if not isinstance(v, int) or v < 1:
            raise FormatError(f"{path}: header field {key!r} must be a positive integer, got {v!r}")
    count = int(np.prod([header[key] for key in dims]))
    start = nl + 1
    need = start + 8 * count
    if len(raw) < need:
        raise FormatError(
            f"{path}: payload truncated: header advertises {count} values ending at byte {need}, "
            f"file ends at byte {len(raw)}"
        )
    if len(raw) > need:
        raise FormatError(f"{path}: {len(raw) - need} trailing bytes after payload end at byte {need}")
    data = np.frombuffer(raw, dtype=_LE_F64, count=count, offset=start).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise FormatError(f"{path}: non-finite value at byte {start + 8 * int(bad[0])}")
    return header, data.reshape([header[key] for key in dims])


def write_shapes(path, shapes: ShapeBank):
    header = {"format": "spikelasso.shapes", "version": FORMAT_VERSION,
              "k": shapes.k, "d": shapes.d, "t": shapes.t, "sample_rate_hz": shapes.sample_rate_hz}
    _write_binary(path, header, shapes.waveforms)


def read_shapes(path) -> ShapeBank:
    header, w = _read_binary(path, "spikelasso.shapes", ("k", "d", "t"))
    try:
        return ShapeBank(w, header.get("sample_rate_hz"))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_signal(path, signal: MultiSignal):
    header = {"format": "spikelasso.signal", "version": FORMAT_VERSION,
              "d": signal.d, "n": signal.n, "sample_rate_hz": signal.sample_rate_hz}
    _write_binary(path, header, signal.samples)


def read_signal(path) -> MultiSignal:
    header, s = _read_binary(path, "spikelasso.signal", ("d", "n"))
    return MultiSignal(s, header.get("sample_rate_hz"))


ACT_HEADER = ["neuron", "sample", "amplitude"]


def write_activations(path, acts: ActivationSet):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACT_HEADER)
        for r, j, a in acts:
            w.writerow([r, j, repr(a)])


def read_activations(path, n: Optional[int] = None, k: Optional[int] = None) -> ActivationSet:
    """Read an activation CSV; ``n``/``k`` default to the smallest consistent values."""
    rows = []
    seen = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ACT_HEADER:
            raise FormatError(f"{path}: row 1: expected header {','.join(ACT_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}: row {lineno}: expected 3 fields, got {len(row)}")
            try:
                r, j, a = int(row[0]), int(row[1]), float(row[2])
            except ValueError as exc:
                raise FormatError(f"{path}: row {lineno}: {exc}") from None
            if not np.isfinite(a) or a == 0:
                raise FormatError(f"{path}: row {lineno}: amplitude must be nonzero and finite")
            if r < 0 or j < 0:
                raise FormatError(f"{path}: row {lineno}: negative index")
            if (r, j) in seen:
                raise FormatError(f"{path}: row {lineno}: duplicate (neuron={r}, sample={j}), "
                                  f"first seen at row {seen[(r, j)]}")
            seen[(r, j)] = lineno
            rows.append((r, j, a))
    n = n if n is not None else (max((j for _, j, _ in rows), default=0) + 1)
    k = k if k is not None else (max((r for r, _, _ in rows), default=0) + 1)
    try:
        return ActivationSet.from_entries(rows, n, k)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _strip_keys(obj, keys):
    if isinstance(obj, dict):
        return {k: _strip_keys(v, keys) for k, v in obj.items() if k not in keys}
    if isinstance(obj, list):
        return [_strip_keys(v, keys) for v in obj]
    return obj


def artifact_digest(path, volatile: Optional[list] = None) -> str:
    """sha256 of a file, ignoring named CSV columns / JSON keys that hold timings."""
    path = Path(path)
    if not volatile:
        return hashlib.sha256(path.read_bytes()).hexdigest()
    if path.suffix == ".json":
        obj = _strip_keys(json.loads(path.read_text()), set(volatile))
        body = json.dumps(obj, sort_keys=True).encode()
    else:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        drop = {i for i, h in enumerate(rows[0]) if h in volatile} if rows else set()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in rows:
            w.writerow([v for i, v in enumerate(row) if i not in drop])
        body = buf.getvalue().encode()
    return hashlib.sha256(body).hexdigest()


def build_manifest(command: str, argv: list, params: dict, seeds: dict, inputs: list,
                   outputs: list, wall_time: float) -> dict:
    """``outputs`` is a list of ``(path, volatile_fields_or_None)``."""
    return {
        "command": command,
        "argv": list(argv),
        "params": params,
        "seeds": seeds,
        "inputs": [{"path": str(p), "sha256": artifact_digest(p)} for p in inputs],
        "outputs": [
            {"path": str(p), "sha256": artifact_digest(p, vol), "volatile": list(vol or [])}
            for p, vol in outputs
        ],
        "wall_time_s": wall_time,
        "version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "created_unix": time.time(),
        "cwd": os.getcwd(),
    }


def verify_manifest(manifest: dict) -> list:
    """Outputs whose current digest differs from the recorded one."""
    bad = []
    for out in manifest["outputs"]:
        p = Path(out["path"])
        if not p.is_absolute():
            p = Path(manifest.get("cwd", ".")) / p
        if not p.exists() or artifact_digest(p, out.get("volatile")) != out["sha256"]:
            bad.append(str(out["path"]))
    return bad
