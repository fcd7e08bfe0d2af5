"""Binary grid container I/O.

File layout (all integers little-endian):

    offset  size  field
    0       8     magic ``WAAPOGRD``
    8       2     format version (u16, currently 1)
    10      1     axis order (u8; 0 = lat, lon, channel row-major)
    11      1     dtype (u8; 0 = f32, 1 = f64)
    12      12    dims: lat, lon, channels (3 x u32)
    24      ...   channel names: per channel a u16 byte length + UTF-8 bytes
    ...     ...   payload: lat*lon*channels values, little-endian, row-major

The payload length must match the dims and dtype exactly; loaders reject
short or trailing bytes with a format error rather than guessing. f64 files
round-trip bitwise; writing f32 quantizes once on save.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import GridFormatError, ShapeError
from .grid import GridShape, SpatialMask, StateGrid
from .surrogate import SurrogateModel

MAGIC = b"WAAPOGRD"
VERSION = 1
AXIS_LAT_LON_CHAN = 0
_DTYPES = {"f32": (0, "<f4"), "f64": (1, "<f8")}
_DTYPE_BY_CODE = {0: ("f32", "<f4"), 1: ("f64", "<f8")}
_HEADER_FMT = "<8sHBBIII"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


@dataclass(frozen=True)
class GridFileHeader:
    version: int
    axis_order: str
    lat: int
    lon: int
    channels: int
    dtype: str
    channel_names: tuple[str, ...]
    payload_bytes: int


def save_grid(path, grid: StateGrid, channel_names, dtype: str = "f64") -> None:
    """Write a grid with its channel names; f64 round-trips bitwise."""
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    names = tuple(str(n) for n in channel_names)
    shape = grid.shape
    if len(names) != shape.channels:
        raise ShapeError(f"expected {shape.channels} channel names, got {len(names)}")
    code, np_dtype = _DTYPES[dtype]
    header = struct.pack(
        _HEADER_FMT, MAGIC, VERSION, AXIS_LAT_LON_CHAN, code, shape.lat, shape.lon, shape.channels
    )
    chunks = [header]
    for name in names:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"channel name too long: {name[:32]!r}...")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
    chunks.append(np.ascontiguousarray(grid.values, dtype=np_dtype).tobytes())
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise OSError(f"failed to write grid file {path}: {exc}") from exc


def _parse_header(buf: bytes, path) -> tuple[GridFileHeader, int]:
    if len(buf) < _HEADER_SIZE:
        raise GridFormatError(f"{path}: file too short for header ({len(buf)} bytes)")
    magic, version, axis, dtype_code, lat, lon, channels = struct.unpack_from(_HEADER_FMT, buf)
    if magic != MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise GridFormatError(f"{path}: unsupported version {version}")
    if axis != AXIS_LAT_LON_CHAN:
        raise GridFormatError(f"{path}: unknown axis order code {axis}")
    if dtype_code not in _DTYPE_BY_CODE:
        raise GridFormatError(f"{path}: unknown dtype code {dtype_code}")
    if min(lat, lon, channels) < 1:
        raise GridFormatError(f"{path}: invalid dims ({lat}, {lon}, {channels})")
    dtype_name, np_dtype = _DTYPE_BY_CODE[dtype_code]
    offset = _HEADER_SIZE
    names = []
    for _ in range(channels):
        if offset + 2 > len(buf):
            raise GridFormatError(f"{path}: truncated channel name table")
        (nlen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        if offset + nlen > len(buf):
            raise GridFormatError(f"{path}: truncated channel name")
        try:
            names.append(buf[offset : offset + nlen].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise GridFormatError(f"{path}: channel name is not valid UTF-8") from exc
        offset += nlen
    payload_bytes = lat * lon * channels * np.dtype(np_dtype).itemsize
    header = GridFileHeader(
        version=version,
        axis_order="lat_lon_chan",
        lat=lat,
        lon=lon,
        channels=channels,
        dtype=dtype_name,
        channel_names=tuple(names),
        payload_bytes=payload_bytes,
    )
    return header, offset


def read_header(path) -> GridFileHeader:
    """Parse and validate just the header of a grid file."""
    buf = Path(path).read_bytes()
    header, offset = _parse_header(buf, path)
    actual = len(buf) - offset
    if actual != header.payload_bytes:
        raise GridFormatError(
            f"{path}: payload is {actual} bytes, expected {header.payload_bytes}"
        )
    return header


def load_grid(path) -> tuple[StateGrid, tuple[str, ...]]:
    """Read a grid file back; values come out as float64."""
    buf = Path(path).read_bytes()
    header, offset = _parse_header(buf, path)
    actual = len(buf) - offset
    if actual != header.payload_bytes:
        raise GridFormatError(
            f"{path}: payload is {actual} bytes, expected {header.payload_bytes}"
        )
    np_dtype = _DTYPE_BY_CODE[_DTYPES[header.dtype][0]][1]
    flat = np.frombuffer(buf, dtype=np_dtype, count=header.lat * header.lon * header.channels, offset=offset)
    values = flat.astype(np.float64).reshape(header.lat, header.lon, header.channels)
    return StateGrid(values), header.channel_names


def header_as_json(header: GridFileHeader) -> str:
    d = asdict(header)
    d["channel_names"] = list(header.channel_names)
    return json.dumps(d, sort_keys=True, indent=2)


def save_mask(path, mask: SpatialMask) -> None:
    """Store a spatial mask as a single-channel grid file."""
    save_grid(path, StateGrid(mask.values[:, :, None]), ["mask"])


def load_mask(path) -> SpatialMask:
    grid, _ = load_grid(path)
    if grid.shape.channels != 1:
        raise GridFormatError(f"{path}: mask file must have exactly 1 channel, got {grid.shape.channels}")
    return SpatialMask(grid.values[:, :, 0])


def save_model(directory, model: SurrogateModel) -> None:
    """Persist a model as coupling.grd plus model.json in a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = model.shape.channels
    coupling = StateGrid(model.coupling_matrix.reshape(n, n, 1))
    save_grid(directory / "coupling.grd", coupling, ["coupling"])
    params = {
        "lat": model.shape.lat,
        "lon": model.shape.lon,
        "channels": n,
        "advection_shift": list(model.advection_shift),
        "diffusion_weight": model.diffusion_weight,
        "nonlinearity_gain": model.nonlinearity_gain,
        "seed": model.seed,
    }
    (directory / "model.json").write_text(json.dumps(params, sort_keys=True, indent=2))


def load_model(directory) -> SurrogateModel:
    directory = Path(directory)
    params = json.loads((directory / "model.json").read_text())
    coupling, _ = load_grid(directory / "coupling.grd")
    n = int(params["channels"])
    if coupling.shape.as_tuple() != (n, n, 1):
        raise GridFormatError(f"{directory}: coupling grid shape {coupling.shape.as_tuple()} does not match {n} channels")
    return SurrogateModel(
        shape=GridShape(int(params["lat"]), int(params["lon"]), n),
        advection_shift=tuple(int(s) for s in params["advection_shift"]),
        diffusion_weight=float(params["diffusion_weight"]),
        coupling_matrix=coupling.values[:, :, 0],
        nonlinearity_gain=float(params["nonlinearity_gain"]),
        seed=int(params["seed"]),
    )
