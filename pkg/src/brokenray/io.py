"""File formats: grid fields, sinograms, domain configs.

Field binary format: a short text header (one ``key value...`` pair per
line, ending with a lone ``data`` line) followed by the raw little-endian
float64 sample block in C order. Sinograms come as CSV (17 significant
digits) or as a binary variant mirroring the field layout. All files carry
a format name and version tag.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigError, CorruptHeaderError, FormatVersionError
from .fields import ScalarGridField
from .geometry import ConvexDomain
from .transport import Sinogram

__all__ = [
    "save_field", "load_field",
    "save_sinogram", "load_sinogram",
    "save_sinogram_binary", "load_sinogram_binary",
    "save_domain", "load_domain",
]

_FIELD_MAGIC = "brokenray-field"
_SINO_MAGIC = "brokenray-sinogram"
_VERSION = 1


def _fmt(v):
    return f"{v:.17g}"


# -- fields -------------------------------------------------------------------

def save_field(path, field: ScalarGridField):
    with open(path, "wb") as fh:
        lines = [
            f"{_FIELD_MAGIC} {_VERSION}",
            "dims " + " ".join(str(d) for d in field.dims),
            "origin " + " ".join(_fmt(v) for v in field.origin),
            "spacing " + " ".join(_fmt(v) for v in field.spacing),
            f"mode {field.mode}",
            "dtype float64le",
            "data",
        ]
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def _read_header(fh, magic):
    header = {}
    first = fh.readline().decode("ascii", errors="replace").split()
    if len(first) != 2 or first[0] != magic:
        raise CorruptHeaderError(f"bad magic line {first!r}")
    try:
        version = int(first[1])
    except ValueError:
        raise CorruptHeaderError(f"bad version field {first[1]!r}")
    if version != _VERSION:
        raise FormatVersionError(f"unsupported {magic} version {version}")
    for _ in range(64):
        parts = fh.readline().decode("ascii", errors="replace").split()
        if not parts:
            raise CorruptHeaderError("header ended before 'data' line")
        if parts[0] == "data":
            return header
        header[parts[0]] = parts[1:]
    raise CorruptHeaderError("oversized header")


def load_field(path) -> ScalarGridField:
    with open(path, "rb") as fh:
        header = _read_header(fh, _FIELD_MAGIC)
        try:
            dims = tuple(int(d) for d in header["dims"])
            origin = [float(v) for v in header["origin"]]
            spacing = [float(v) for v in header["spacing"]]
            mode = header.get("mode", ["multilinear"])[0]
            dtype = header.get("dtype", ["float64le"])[0]
        except (KeyError, ValueError) as exc:
            raise CorruptHeaderError(f"bad field header: {exc}")
        if dtype != "float64le":
            raise CorruptHeaderError(f"unsupported dtype {dtype!r}")
        count = int(np.prod(dims))
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise CorruptHeaderError(
                f"truncated payload: expected {8 * count} bytes, got {len(raw)}")
        values = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    return ScalarGridField(origin, spacing, values, mode)


# -- sinograms ------------------------------------------------------------------

def _sino_matrix(sino: Sinogram):
    dim = sino.x.shape[1]
    if dim == 2:
        ang = np.arctan2(sino.theta[:, 1], sino.theta[:, 0])[:, None]
    else:
        ang = np.stack([np.arccos(np.clip(sino.theta[:, 2], -1, 1)),
                        np.arctan2(sino.theta[:, 1], sino.theta[:, 0])], axis=1)
    return np.hstack([sino.x, ang, sino.weight[:, None], sino.values[:, None]])


def _theta_from_angles(ang):
    if ang.shape[1] == 1:
        return np.stack([np.cos(ang[:, 0]), np.sin(ang[:, 0])], axis=1)
    pol, az = ang[:, 0], ang[:, 1]
    sp = np.sin(pol)
    return np.stack([sp * np.cos(az), sp * np.sin(az), np.cos(pol)], axis=1)


def save_sinogram(path, sino: Sinogram):
    """CSV with one row per sampled jet."""
    dim = sino.x.shape[1]
    cols = (["facet"] + [f"x{i}" for i in range(dim)]
            + [f"dir{i}" for i in range(dim - 1)] + ["weight", "value"])
    mat = _sino_matrix(sino)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# {_SINO_MAGIC} {_VERSION} dim={dim}\n")
        fh.write(",".join(cols) + "\n")
        for f, row in zip(sino.facet, mat):
            fh.write(str(int(f)) + "," + ",".join(_fmt(v) for v in row) + "\n")


def load_sinogram(path) -> Sinogram:
    with open(path, "r", encoding="ascii") as fh:
        head = fh.readline().split()
        if len(head) < 4 or head[1] != _SINO_MAGIC:
            raise CorruptHeaderError("not a sinogram CSV")
        if int(head[2]) != _VERSION:
            raise FormatVersionError(f"unsupported sinogram version {head[2]}")
        dim = int(head[3].split("=")[1])
        fh.readline()  # column names
        rows = [line.split(",") for line in fh if line.strip()]
    if not rows:
        raise CorruptHeaderError("empty sinogram")
    arr = np.array(rows, dtype=float)
    facet = arr[:, 0].astype(np.int32)
    x = arr[:, 1:1 + dim]
    ang = arr[:, 1 + dim:dim + dim]
    weight = arr[:, -2]
    values = arr[:, -1]
    return Sinogram(facet, x, _theta_from_angles(ang), weight, values, sampling=None)


def save_sinogram_binary(path, sino: Sinogram):
    dim = sino.x.shape[1]
    mat = _sino_matrix(sino)
    with open(path, "wb") as fh:
        lines = [
            f"{_SINO_MAGIC} {_VERSION}",
            f"dim {dim}",
            f"count {sino.n_rays}",
            "dtype float64le",
            "data",
        ]
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(sino.facet, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())


def load_sinogram_binary(path) -> Sinogram:
    with open(path, "rb") as fh:
        header = _read_header(fh, _SINO_MAGIC)
        try:
            dim = int(header["dim"][0])
            count = int(header["count"][0])
        except (KeyError, ValueError) as exc:
            raise CorruptHeaderError(f"bad sinogram header: {exc}")
        raw = fh.read(4 * count)
        if len(raw) != 4 * count:
            raise CorruptHeaderError("truncated facet block")
        facet = np.frombuffer(raw, dtype="<i4").copy()
        ncol = dim + (dim - 1) + 2
        raw = fh.read(8 * count * ncol)
        if len(raw) != 8 * count * ncol:
            raise CorruptHeaderError("truncated value block")
        mat = np.frombuffer(raw, dtype="<f8").reshape(count, ncol).copy()
    x = mat[:, :dim]
    ang = mat[:, dim:dim + dim - 1]
    return Sinogram(facet, x, _theta_from_angles(ang), mat[:, -2], mat[:, -1], sampling=None)


# -- domains ---------------------------------------------------------------------

def save_domain(path, domain: ConvexDomain):
    with open(path, "w", encoding="ascii") as fh:
        json.dump(domain.to_dict(), fh, indent=2)
        fh.write("\n")


def load_domain(path) -> ConvexDomain:
    with open(path, "r", encoding="ascii") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"domain config is not valid JSON: {exc}")
    return ConvexDomain.from_dict(d)
