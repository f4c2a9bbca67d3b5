"""Binary image/sinogram files, 16-bit previews and trace CSVs.

Binary layout::

    b"MSCTRAW1"                      8-byte magic (format version 1)
    uint32 little endian             header length in bytes
    header                           UTF-8 "key:value" lines
    float64 little endian payload    rows * cols values, row-major
"""

from __future__ import annotations

import csv
import hashlib
import os
import struct
from pathlib import Path

import numpy as np

from msct.errors import FormatError
from msct.geometry import ImageGrid, ScanGeometry, Sinogram

__all__ = [
    "MAGIC",
    "write_raw",
    "read_raw",
    "write_image",
    "read_image",
    "write_sinogram",
    "read_sinogram",
    "to_uint16",
    "write_pgm16",
    "read_pgm16",
    "write_trace_csv",
    "sha256_file",
]

MAGIC = b"MSCTRAW1"
_LEN = struct.Struct("<I")


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror or exc})") from None


def write_raw(path, values: np.ndarray, header: dict) -> None:
    values = np.asarray(values, dtype="<f8")
    if values.ndim != 2:
        raise ValueError("payload must be 2D")
    hdr = dict(header)
    hdr["rows"], hdr["cols"] = str(values.shape[0]), str(values.shape[1])
    lines = []
    for k, v in hdr.items():
        k, v = str(k), str(v)
        if ":" in k or "\n" in k or "\n" in v:
            raise ValueError(f"header entry {k!r} cannot be encoded")
        lines.append(f"{k}:{v}\n")
    text = "".join(lines).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(text)))
        fh.write(text)
        fh.write(np.ascontiguousarray(values).tobytes())


def read_raw(path) -> tuple[dict, np.ndarray]:
    """Return ``(header, values)``; raise :class:`FormatError` on malformed files."""
    blob = _read_bytes(path)
    if len(blob) < len(MAGIC) + _LEN.size or blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not an MSCTRAW1 file")
    (hlen,) = _LEN.unpack_from(blob, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if start + hlen > len(blob):
        raise FormatError(f"{path}: truncated header")
    try:
        text = blob[start: start + hlen].decode("utf-8")
        header = dict(line.split(":", 1) for line in text.splitlines() if line)
        rows, cols = int(header["rows"]), int(header["cols"])
    except (UnicodeDecodeError, ValueError, KeyError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    if rows < 1 or cols < 1:
        raise FormatError(f"{path}: invalid dimensions {rows}x{cols}")
    payload = blob[start + hlen:]
    if len(payload) != rows * cols * 8:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {rows * cols * 8}")
    values = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(float)
    return header, values


def write_image(path, image: ImageGrid, **extra) -> None:
    header = {"kind": "image", "pixel_size": repr(float(image.pixel_size)), "units": "1/length"}
    header.update({k: str(v) for k, v in extra.items()})
    write_raw(path, image.values, header)


def read_image(path) -> ImageGrid:
    header, values = read_raw(path)
    if header.get("kind") != "image":
        raise FormatError(f"{path}: expected an image, found {header.get('kind')!r}")
    try:
        return ImageGrid(values, float(header["pixel_size"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad image header ({exc})") from None


def write_sinogram(path, sino: Sinogram, **extra) -> None:
    header = {"kind": "sinogram", "units": "log-attenuation"}
    header.update(sino.geometry.to_header())
    if sino.energy_label is not None:
        header["energy_label"] = sino.energy_label
    header.update({k: str(v) for k, v in extra.items()})
    write_raw(path, sino.values, header)


def read_sinogram(path) -> Sinogram:
    header, values = read_raw(path)
    if header.get("kind") != "sinogram":
        raise FormatError(f"{path}: expected a sinogram, found {header.get('kind')!r}")
    try:
        geom = ScanGeometry.from_header(header)
        return Sinogram(values, geom, header.get("energy_label"))
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: bad sinogram header ({exc})") from None


def to_uint16(values: np.ndarray) -> np.ndarray:
    """Linearly map ``[min, max]`` onto ``[0, 65535]`` (constant input maps to 0)."""
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint16)
    return np.round((v - lo) / (hi - lo) * 65535.0).astype(np.uint16)


def write_pgm16(path, values: np.ndarray) -> None:
    """Binary portable graymap, 16 bits per pixel, big endian."""
    img = to_uint16(values)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(img.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    blob = _read_bytes(path)
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5" or parts[2] != b"65535":
        raise FormatError(f"{path}: not a 16-bit binary PGM")
    w, h = (int(x) for x in parts[1].split())
    data = parts[3]
    if len(data) != 2 * w * h:
        raise FormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(data, dtype=">u2").reshape(h, w).astype(np.uint16)


def write_trace_csv(path, trace) -> None:
    from msct.optimizers import CSV_COLUMNS

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in trace.rows():
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
