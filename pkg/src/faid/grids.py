"""Uniform square-cell grids, density grids, and their file codec.

Two interchangeable on-disk layouts are supported:

* text: a header line ``nx ny dx x0 y0`` followed by nx lines of ny
  whitespace-separated values (row-major in the x index). Field dumps use
  the same header followed by interleaved ``re im`` pairs (2*ny values
  per line).
* binary: magic bytes ``FDG1``, one kind byte (0 = real density,
  1 = complex field), little-endian int64 nx, ny, float64 dx, x0, y0,
  then nx*ny float64 values in C order (interleaved re/im pairs for
  kind 1).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import GridFileError

MAGIC = b"FDG1"
_HEADER_STRUCT = struct.Struct("<4sBqqddd")


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of nx*ny square cells of size dx (um), lower-left
    corner at (x0, y0). Cell (i, j) is centered at
    (x0 + (i + 0.5) dx, y0 + (j + 0.5) dx)."""

    nx: int
    ny: int
    dx: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid must be at least 8x8 cells, got {self.nx}x{self.ny}")
        if not (np.isfinite(self.dx) and self.dx > 0):
            raise ValueError(f"cell size must be finite and positive, got {self.dx}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def width(self) -> float:
        return self.nx * self.dx

    @property
    def height(self) -> float:
        return self.ny * self.dx

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the grid in um."""
        return (self.x0, self.x0 + self.width, self.y0, self.y0 + self.height)

    def x_centers(self) -> np.ndarray:
        return self.x0 + (np.arange(self.nx) + 0.5) * self.dx

    def y_centers(self) -> np.ndarray:
        return self.y0 + (np.arange(self.ny) + 0.5) * self.dx

    def x_index(self, x: float) -> int:
        """Index of the cell column containing coordinate x."""
        i = int(np.floor((x - self.x0) / self.dx))
        if not 0 <= i < self.nx:
            raise ValueError(f"x = {x} um is outside the grid")
        return i

    def y_index(self, y: float) -> int:
        j = int(np.floor((y - self.y0) / self.dx))
        if not 0 <= j < self.ny:
            raise ValueError(f"y = {y} um is outside the grid")
        return j


@dataclass
class DensityGrid:
    """Material density rho in [0, 1] on a GridSpec; values indexed [ix, iy]."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"density shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density contains non-finite values")
        if self.values.min() < -1e-12 or self.values.max() > 1 + 1e-12:
            raise ValueError(
                f"density out of [0, 1]: min {self.values.min()}, max {self.values.max()}"
            )
        # tolerate float fuzz at the endpoints, then pin exactly
        np.clip(self.values, 0.0, 1.0, out=self.values)

    def copy(self) -> "DensityGrid":
        return DensityGrid(self.grid, self.values.copy())


def _format_header(grid: GridSpec) -> str:
    return f"{grid.nx} {grid.ny} {grid.dx!r} {grid.x0!r} {grid.y0!r}\n"


def save_density_grid(path, density: DensityGrid, binary: bool = False) -> None:
    if binary:
        _save_binary(path, density.grid, density.values, kind=0)
        return
    with open(path, "w") as fh:
        fh.write(_format_header(density.grid))
        np.savetxt(fh, density.values, fmt="%.17g")


def save_field_grid(path, grid: GridSpec, values: np.ndarray, binary: bool = False) -> None:
    """Write a complex field as interleaved re/im pairs."""
    values = np.asarray(values, dtype=np.complex128)
    if values.shape != grid.shape:
        raise ValueError("field shape does not match grid")
    if binary:
        _save_binary(path, grid, values, kind=1)
        return
    inter = np.empty((grid.nx, 2 * grid.ny))
    inter[:, 0::2] = values.real
    inter[:, 1::2] = values.imag
    with open(path, "w") as fh:
        fh.write(_format_header(grid))
        np.savetxt(fh, inter, fmt="%.17g")


def _save_binary(path, grid: GridSpec, values: np.ndarray, kind: int) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER_STRUCT.pack(MAGIC, kind, grid.nx, grid.ny, grid.dx, grid.x0, grid.y0))
        fh.write(np.ascontiguousarray(values).tobytes())


def load_density_grid(path) -> DensityGrid:
    grid, values, kind = _load_grid_file(path)
    if kind != 0:
        raise GridFileError(f"{path}: expected a real density grid, found a complex field")
    try:
        return DensityGrid(grid, values)
    except ValueError as exc:
        raise GridFileError(f"{path}: {exc}") from exc


def load_field_grid(path) -> tuple[GridSpec, np.ndarray]:
    grid, values, kind = _load_grid_file(path)
    if kind != 1:
        raise GridFileError(f"{path}: expected a complex field file, found a density grid")
    return grid, values


def _load_grid_file(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] == MAGIC:
        return _parse_binary(path, raw)
    return _parse_text(path, raw)


def _parse_binary(path, raw: bytes):
    if len(raw) < _HEADER_STRUCT.size:
        raise GridFileError(f"{path}: truncated binary header", byte_offset=len(raw))
    _, kind, nx, ny, dx, x0, y0 = _HEADER_STRUCT.unpack_from(raw)
    if kind not in (0, 1):
        raise GridFileError(f"{path}: unknown kind byte {kind}", byte_offset=4)
    try:
        grid = GridSpec(int(nx), int(ny), dx, x0, y0)
    except ValueError as exc:
        raise GridFileError(f"{path}: {exc}", byte_offset=5) from exc
    dtype = np.float64 if kind == 0 else np.complex128
    expected = nx * ny * np.dtype(dtype).itemsize
    body = raw[_HEADER_STRUCT.size :]
    if len(body) != expected:
        raise GridFileError(
            f"{path}: expected {expected} data bytes, found {len(body)}",
            byte_offset=_HEADER_STRUCT.size + min(len(body), expected),
        )
    values = np.frombuffer(body, dtype=dtype).reshape(nx, ny).copy()
    return grid, values, kind


def _parse_text(path, raw: bytes):
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise GridFileError(f"{path}: not valid UTF-8 text", byte_offset=exc.start) from exc

    newline = text.find("\n")
    if newline < 0:
        raise GridFileError(f"{path}: missing header line", byte_offset=len(raw))
    header = text[:newline].split()
    if len(header) != 5:
        raise GridFileError(
            f"{path}: header must be 'nx ny dx x0 y0', got {len(header)} fields",
            byte_offset=0,
        )
    try:
        nx, ny = int(header[0]), int(header[1])
        dx, x0, y0 = (float(v) for v in header[2:])
        grid = GridSpec(nx, ny, dx, x0, y0)
    except ValueError as exc:
        raise GridFileError(f"{path}: bad header: {exc}", byte_offset=0) from exc

    body = text[newline + 1 :]
    offset0 = len(text[: newline + 1].encode("utf-8"))
    flat = []
    pos = 0
    for token in body.split():
        try:
            flat.append(float(token))
        except ValueError:
            raise GridFileError(
                f"{path}: bad numeric value {token!r}",
                byte_offset=offset0 + body.find(token, pos),
            ) from None
        pos = body.find(token, pos) + len(token)

    n = nx * ny
    if len(flat) == n:
        values = np.array(flat).reshape(nx, ny)
        return grid, values, 0
    if len(flat) == 2 * n:
        inter = np.array(flat).reshape(nx, 2 * ny)
        return grid, inter[:, 0::2] + 1j * inter[:, 1::2], 1
    raise GridFileError(
        f"{path}: expected {n} (density) or {2 * n} (field) values, found {len(flat)}",
        byte_offset=len(raw),
    )
