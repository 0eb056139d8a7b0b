"""Readers and writers: PGM/PFM rasters, event CSV, checkpoints, JSON lines.

Every writer is the exact inverse of its reader, so write -> read -> write
reproduces the original bytes.
"""
from __future__ import annotations

import json
import re
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .events import EVENT_DTYPE, EventHistogram, EventStream
from .fields import ScalarField, VectorField

CHECKPOINT_MAGIC = b"EVBR1"

_HEADER_TOKEN = re.compile(rb"\s*(\S+)")


def _read_tokens(buf: bytes, n: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < n:
        while True:
            while pos < len(buf) and buf[pos:pos + 1].isspace():
                pos += 1
            if buf[pos:pos + 1] != b"#":
                break
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        m = _HEADER_TOKEN.match(buf, pos)
        if m is None:
            raise ValidationError("truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos + 1  # single whitespace byte ends the header


def write_pgm(path, img: ScalarField) -> None:
    """8-bit binary PGM; intensities in [0, 1] map to 0..255."""
    if np.any(img.data < 0) or np.any(img.data > 1):
        raise ValidationError(f"{path}: PGM intensities must lie in [0, 1]")
    q = np.rint(img.data * 255.0).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode()
    Path(path).write_bytes(header + q.tobytes())


def read_pgm(path) -> ScalarField:
    buf = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), off = _read_tokens(buf, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, IndexError) as e:
        raise ValidationError(f"{path}: malformed PGM header ({e})") from None
    if magic != b"P5" or maxval != 255:
        raise ValidationError(f"{path}: only 8-bit binary PGM (P5, maxval 255) is supported")
    raw = buf[off:off + w * h]
    if len(raw) != w * h:
        raise ValidationError(f"{path}: expected {w * h} pixels, found {len(raw)}")
    return ScalarField(np.frombuffer(raw, dtype=np.uint8).reshape(h, w) / 255.0)


def write_pfm(path, data) -> None:
    """Single-channel little-endian PFM (scale -1.0), bottom row first."""
    a = data.data if isinstance(data, ScalarField) else np.asarray(data, dtype=np.float64)
    h, w = a.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode()
    Path(path).write_bytes(header + np.flipud(a).astype("<f4").tobytes())


def read_pfm(path) -> ScalarField:
    buf = Path(path).read_bytes()
    try:
        (magic, w, h, scale), off = _read_tokens(buf, 4)
        w, h, scale = int(w), int(h), float(scale)
    except (ValueError, IndexError) as e:
        raise ValidationError(f"{path}: malformed PFM header ({e})") from None
    if magic != b"Pf":
        raise ValidationError(f"{path}: only single-channel PFM ('Pf') is supported")
    dtype = "<f4" if scale < 0 else ">f4"
    raw = buf[off:off + 4 * w * h]
    if len(raw) != 4 * w * h:
        raise ValidationError(f"{path}: expected {w * h} floats, found {len(raw) // 4}")
    a = np.flipud(np.frombuffer(raw, dtype=dtype).reshape(h, w)).astype(np.float64)
    return ScalarField(a * abs(scale) if abs(scale) != 1.0 else a)


def write_vector_field(prefix, f: VectorField) -> None:
    write_pfm(f"{prefix}_u.pfm", f.u)
    write_pfm(f"{prefix}_v.pfm", f.v)


def read_vector_field(prefix) -> VectorField:
    u, v = read_pfm(f"{prefix}_u.pfm"), read_pfm(f"{prefix}_v.pfm")
    if u.shape != v.shape:
        raise ValidationError(f"{prefix}: _u and _v components differ in size")
    return VectorField(u.data, v.data)


def write_histogram(prefix, hist: EventHistogram) -> None:
    write_pfm(f"{prefix}_pos.pfm", hist.pos)
    write_pfm(f"{prefix}_neg.pfm", hist.neg)


def read_histogram(prefix) -> EventHistogram:
    return EventHistogram(read_pfm(f"{prefix}_pos.pfm").data, read_pfm(f"{prefix}_neg.pfm").data)


def write_events_csv(path, stream: EventStream) -> None:
    ev = stream.events
    lines = ["t,x,y,p"]
    lines.extend(f"{t:.9f},{x},{y},{p}" for t, x, y, p in zip(ev["t"], ev["x"], ev["y"], ev["p"]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_events_csv(path, width: int | None = None, height: int | None = None) -> EventStream:
    """Parse an event CSV.  Without an explicit size the sensor is the bounding box."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "t,x,y,p":
        raise ValidationError(f"{path}: header must be 't,x,y,p'")
    rows = [ln.split(",") for ln in text[1:] if ln.strip()]
    arr = np.empty(len(rows), dtype=EVENT_DTYPE)
    try:
        for i, (t, x, y, p) in enumerate(rows):
            arr[i] = (float(t), int(x), int(y), int(p))
    except ValueError as e:
        raise ValidationError(f"{path}: bad event row ({e})") from None
    if width is None:
        width = int(arr["x"].max()) + 1 if len(arr) else 0
    if height is None:
        height = int(arr["y"].max()) + 1 if len(arr) else 0
    return EventStream(arr, width, height)


def write_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    """Binary parameter dump: magic, then per tensor name/rank/extents/float64 data."""
    out = [CHECKPOINT_MAGIC]
    for name, a in arrays.items():
        a = np.asarray(a, dtype="<f8")
        nb = name.encode("utf-8")
        out.append(struct.pack("<Q", len(nb)))
        out.append(nb)
        out.append(struct.pack("<Q", a.ndim))
        out.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        out.append(np.ascontiguousarray(a).tobytes())
    Path(path).write_bytes(b"".join(out))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if not buf.startswith(CHECKPOINT_MAGIC):
        raise ValidationError(f"{path}: not an EVBR1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    arrays: dict[str, np.ndarray] = {}
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            shape = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > len(buf):
                raise ValidationError(f"{path}: truncated tensor {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            pos += 8 * count
    except struct.error as e:
        raise ValidationError(f"{path}: corrupt checkpoint ({e})") from None
    return arrays


def append_jsonl(path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())
