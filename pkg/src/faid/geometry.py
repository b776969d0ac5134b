"""Design-parameter vectors, polygon sets, ports, and device specs.

Coordinates are in um throughout. Polygons are closed vertex loops
(first vertex not repeated); device builders emit loops with pairwise
disjoint interiors so that rasterized coverages add exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class DesignParams:
    """Bounded parameter vector: lower <= values <= upper elementwise."""

    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=np.float64))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=np.float64))
        n = self.values.shape
        if self.lower.shape != n or self.upper.shape != n or self.values.ndim != 1:
            raise ValidationError("values, lower, upper must be 1D vectors of one length")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("design parameters contain non-finite values")
        if np.any(self.lower > self.values) or np.any(self.values > self.upper):
            bad = int(np.argmax((self.lower > self.values) | (self.values > self.upper)))
            raise ValidationError(
                f"parameter {bad} = {self.values[bad]} outside "
                f"[{self.lower[bad]}, {self.upper[bad]}]"
            )

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values: np.ndarray) -> "DesignParams":
        return DesignParams(values, self.lower, self.upper)

    def sha256(self) -> str:
        return hashlib.sha256(self.values.tobytes()).hexdigest()[:16]


def param_values(p) -> np.ndarray:
    """Accept a DesignParams or a bare array; perturbation paths (finite
    differences) pass raw arrays that may sit slightly outside the bounds."""
    return np.asarray(getattr(p, "values", p), dtype=np.float64)


@dataclass
class PolygonSet:
    """A list of closed vertex loops, each an (n, 2) float array in um."""

    polygons: list[np.ndarray]

    def __post_init__(self):
        loops = []
        for k, poly in enumerate(self.polygons):
            arr = np.asarray(poly, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
                raise ValidationError(f"polygon {k} must be an (n>=3, 2) vertex array")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"polygon {k} contains non-finite coordinates")
            loops.append(arr)
        self.polygons = loops

    def __len__(self) -> int:
        return len(self.polygons)

    def bounds(self) -> tuple[float, float, float, float]:
        allv = np.vstack(self.polygons)
        return (allv[:, 0].min(), allv[:, 0].max(), allv[:, 1].min(), allv[:, 1].max())

    def mirrored_y(self) -> "PolygonSet":
        """Reflection about the y = 0 axis."""
        return PolygonSet([poly * np.array([1.0, -1.0]) for poly in self.polygons])


class DeviceKind(Enum):
    YBRANCH = "ybranch"
    SWG_CONVERTER = "swg_converter"
    STRAIGHT = "straight"


@dataclass(frozen=True)
class Port:
    """A transverse measurement/source slice at fixed x.

    avg_window > 0 requests that the port's mode be solved on the
    cross-section averaged over that x-window (used on subwavelength-grating
    leads, where the local period is homogenized away).
    """

    name: str
    x: float
    y_min: float
    y_max: float
    avg_window: float = 0.0

    def __post_init__(self):
        if self.y_max <= self.y_min:
            raise ValidationError(f"port {self.name}: empty slice extent")


@dataclass(frozen=True)
class DeviceSpec:
    """Geometry recipe for one device: fixed access structures plus a
    parameterized design region. Device-specific fields are bundled in
    `geom` (see devices.py for the concrete builders)."""

    kind: DeviceKind
    domain_width: float
    domain_height: float
    input_port: Port
    output_ports: tuple[Port, ...]
    geom: object
    min_feature: float = 0.060  # mask-level floor, um
    boundary_samples: int = 161

    @property
    def ports(self) -> tuple[Port, ...]:
        return (self.input_port,) + self.output_ports

    def domain_extent(self) -> tuple[float, float, float, float]:
        w, h = self.domain_width, self.domain_height
        return (-w / 2, w / 2, -h / 2, h / 2)


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area of one loop (positive for CCW)."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def loops_self_intersect(poly: np.ndarray, tol: float = 1e-12) -> bool:
    """True if any two non-adjacent edges of the loop properly intersect.

    O(n^2) sweep, used for validation of imported geometry and in tests;
    the device builders guarantee simple loops by construction.
    """
    n = poly.shape[0]
    a = poly
    b = np.roll(poly, -1, axis=0)
    d = b - a
    for k in range(n):
        # candidate edges j > k+1, excluding the wrap-adjacent pair (k, n-1) for k = 0
        j0 = k + 2
        j1 = n if k > 0 else n - 1
        if j0 >= j1:
            continue
        aj = a[j0:j1]
        dj = d[j0:j1]
        denom = d[k, 0] * dj[:, 1] - d[k, 1] * dj[:, 0]
        rel = aj - a[k]
        t = rel[:, 0] * dj[:, 1] - rel[:, 1] * dj[:, 0]
        u = rel[:, 0] * d[k, 1] - rel[:, 1] * d[k, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = t / denom
            uu = u / denom
        hit = (np.abs(denom) > tol) & (tt > tol) & (tt < 1 - tol) & (uu > tol) & (uu < 1 - tol)
        if np.any(hit):
            return True
    return False


def save_polygons(path, polys: PolygonSet, device_kind: str, params_hash: str) -> None:
    """Plain-text polygon export: one loop per block of `x y` lines,
    blocks separated by blank lines."""
    with open(path, "w") as fh:
        fh.write(f"# faid polygons device={device_kind} params_sha256={params_hash}\n")
        for k, poly in enumerate(polys.polygons):
            if k:
                fh.write("\n")
            for x, y in poly:
                fh.write(f"{x!r} {y!r}\n")


def load_polygons(path) -> PolygonSet:
    loops: list[list[list[float]]] = [[]]
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                continue
            if not line:
                if loops[-1]:
                    loops.append([])
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValidationError(f"{path}: malformed vertex line {line!r}")
            loops[-1].append([float(parts[0]), float(parts[1])])
    if not loops[-1]:
        loops.pop()
    if not loops:
        raise ValidationError(f"{path}: no polygons found")
    return PolygonSet([np.array(loop) for loop in loops])
