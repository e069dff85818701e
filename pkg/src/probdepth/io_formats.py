"""Readers and writers for PFM, PGM/PPM, JSON reports and CSV tables.

PFM layout: ``PF`` (3 channels) or ``Pf`` (1 channel), then ``width height``,
then a scale whose sign gives the byte order (negative = little-endian),
each on its own line, followed by float32 rows stored bottom-to-top.
Arrays returned by the readers are top-to-bottom.

JSON and CSV floats are written with 17 significant digits so that every
float64 value parses back bit-exactly.  Output is byte-deterministic.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .depthdist import GAUSSIAN, EtaMap


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------- PFM


def write_pfm(path, data, little_endian: bool = True) -> None:
    """Write a 2-D (gray) or ``(H, W, 3)`` (color) array as float32 PFM.

    An ``(H, W, 1)`` array is stored as gray.
    """
    a = np.asarray(data)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise FormatError(f"PFM holds (H, W) or (H, W, 3) arrays, got shape {a.shape}")
    H, W = a.shape[:2]
    dtype = "<f4" if little_endian else ">f4"
    payload = np.ascontiguousarray(a[::-1], dtype=dtype).tobytes()
    scale = b"-1.0" if little_endian else b"1.0"
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{W} {H}".encode() + b"\n" + scale + b"\n" + payload)


def _header_line(f, what):
    line = f.readline()
    if not line.endswith(b"\n"):
        raise FormatError(f"malformed PFM header: missing {what}")
    return line.decode("ascii", errors="replace").strip()


def read_pfm(path, with_mask: bool = False):
    """Read a PFM file as float32, top row first.

    NaN entries are not an error.  With ``with_mask`` the call returns
    ``(data, valid)`` where ``valid`` is False wherever any channel is
    non-finite.
    """
    with open(path, "rb") as f:
        tag = _header_line(f, "type tag")
        if tag not in ("PF", "Pf"):
            raise FormatError(f"malformed PFM header: bad tag {tag!r}")
        dims = _header_line(f, "dimensions").split()
        if len(dims) != 2:
            raise FormatError(f"malformed PFM header: bad dimensions {dims!r}")
        try:
            W, H = int(dims[0]), int(dims[1])
            scale = float(_header_line(f, "scale"))
        except ValueError as exc:
            raise FormatError(f"malformed PFM header: {exc}") from None
        if W <= 0 or H <= 0 or scale == 0 or not math.isfinite(scale):
            raise FormatError("malformed PFM header: dimensions must be positive and scale nonzero")
        C = 3 if tag == "PF" else 1
        count = W * H * C
        raw = f.read(4 * count)
    if len(raw) < 4 * count:
        raise FormatError(f"truncated PFM payload: expected {4 * count} bytes, got {len(raw)}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype).astype(np.float32)
    data = data.reshape((H, W, C) if C == 3 else (H, W))[::-1].copy()
    if not with_mask:
        return data
    finite = np.isfinite(data)
    return data, (finite.all(axis=2) if C == 3 else finite)


# ---------------------------------------------------------------- PGM / PPM


def _write_pnm(path, magic: bytes, data: np.ndarray):
    H, W = data.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n" + f"{W} {H}".encode() + b"\n255\n" + np.ascontiguousarray(data).tobytes())


def _read_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("malformed PNM header")
        fields.append(blob[start:pos])
    if fields[0] != magic:
        raise FormatError(f"expected {magic.decode()} file, got tag {fields[0]!r}")
    try:
        W, H, maxval = (int(x) for x in fields[1:])
    except ValueError:
        raise FormatError("malformed PNM header") from None
    if W <= 0 or H <= 0 or not 0 < maxval < 256:
        raise FormatError("only 8-bit PNM files with positive dimensions are supported")
    pos += 1  # single whitespace before the raster
    raw = blob[pos : pos + W * H * channels]
    if len(raw) < W * H * channels:
        raise FormatError("truncated PNM payload")
    shape = (H, W, channels) if channels > 1 else (H, W)
    return np.frombuffer(raw, dtype=np.uint8).reshape(shape).copy()


def write_pgm(path, data) -> None:
    a = np.asarray(data)
    if a.ndim != 2 or a.dtype != np.uint8:
        raise FormatError("PGM data must be a 2-D uint8 array")
    _write_pnm(path, b"P5", a)


def read_pgm(path) -> np.ndarray:
    return _read_pnm(path, b"P5", 1)


def write_mask(path, mask) -> None:
    """Boolean mask as P5 PGM: 255 = valid, 0 = invalid."""
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def read_mask(path) -> np.ndarray:
    """Nonzero PGM entries are valid."""
    return read_pgm(path) != 0


def to_uint8(image) -> np.ndarray:
    """Quantize a [0, 1] float image to 8 bits (round half to even)."""
    return np.round(np.clip(np.asarray(image, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, data) -> None:
    a = np.asarray(data)
    if a.ndim != 3 or a.shape[2] != 3 or a.dtype != np.uint8:
        raise FormatError("PPM data must be an (H, W, 3) uint8 array")
    _write_pnm(path, b"P6", a)


def read_ppm(path) -> np.ndarray:
    return _read_pnm(path, b"P6", 3)


# ---------------------------------------------------------------- JSON


def format_float(x: float) -> str:
    if not math.isfinite(x):
        raise FormatError(f"cannot serialize non-finite value {x}")
    return "%.17g" % x


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with keys in insertion order and 17-digit floats."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    raise FormatError(f"cannot serialize {type(obj).__name__}")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(obj) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def write_report(report, path) -> None:
    """Serialize a :class:`~probdepth.metrics.MetricReport` (or a plain dict)."""
    write_json(path, report.to_dict() if hasattr(report, "to_dict") else report)


def read_report(path):
    from .metrics import MetricReport

    d = read_json(path)
    floats = ("abs_rel", "rmse", "delta1", "aru", "rmsu")
    return MetricReport(
        **{k: float(d[k]) for k in floats},
        ause={k: float(v) for k, v in d["ause"].items()},
        aurg={k: float(v) for k, v in d["aurg"].items()},
        n_frames=int(d["n_frames"]),
    )


# ---------------------------------------------------------------- CSV


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format_float(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_cell(v) for v in row) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise FormatError("empty CSV file")
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def write_trace_csv(path, trace) -> None:
    rows = [(i, float(l), float(g)) for i, (l, g) in enumerate(zip(trace.losses, trace.grad_norms))]
    write_csv(path, ("step", "loss", "grad_norm"), rows)


def write_curves_csv(path, curves) -> None:
    """``curves[i][metric]`` sparsification curves of frame ``i``."""
    rows = []
    for i, per in enumerate(curves):
        for metric, c in per.items():
            for f, p, o in zip(c.fractions, c.values_pred, c.values_oracle):
                rows.append((i, metric, float(f), float(p), float(o), float(c.value_random)))
    write_csv(path, ("frame", "metric", "fraction", "pred", "oracle", "random"), rows)


# ---------------------------------------------------------------- EtaMap


def write_eta(directory, eta: EtaMap) -> None:
    """``mu.pfm`` and ``alpha.pfm`` (float32).

    The alpha file always holds the relative spread ``sigma / mu``, whatever
    the map's parameterization, so a pair of files has one meaning.
    """
    os.makedirs(directory, exist_ok=True)
    alpha = eta.alpha if eta.parameterization == "alpha" else eta.sigma / eta.mu
    write_pfm(os.path.join(directory, "mu.pfm"), eta.mu)
    write_pfm(os.path.join(directory, "alpha.pfm"), alpha)


def read_eta(directory, family=GAUSSIAN) -> EtaMap:
    """Inverse of :func:`write_eta`; returns an alpha-parameterized map."""
    mu = read_pfm(os.path.join(directory, "mu.pfm")).astype(float)
    alpha = read_pfm(os.path.join(directory, "alpha.pfm")).astype(float)
    if mu.shape != alpha.shape or mu.ndim != 2:
        raise FormatError("mu.pfm and alpha.pfm must be single-channel maps of equal size")
    return EtaMap(mu, alpha, family, "alpha")
