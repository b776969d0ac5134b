"""Parameterized device geometry: Y-branch splitter, SWG-to-strip
converter, and a straight-waveguide calibration device.

Conventions shared by all builders:

* the propagation axis is +x and every device is mirror-symmetric in y;
* fixed access waveguides extend to the domain edges so they terminate
  inside the absorbing boundary;
* emitted loops have pairwise disjoint interiors (they may share edges),
  so rasterized coverages add exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ValidationError
from .geometry import (
    DesignParams,
    DeviceKind,
    DeviceSpec,
    PolygonSet,
    Port,
    param_values,
)
from .grids import GridSpec
from .raster import rasterize


def _rect(x0, x1, y0, y1) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def _band(x: np.ndarray, y_top: np.ndarray) -> np.ndarray:
    """Mirror-symmetric band between -y_top(x) and +y_top(x)."""
    top = np.column_stack([x, y_top])
    bot = np.column_stack([x[::-1], -y_top[::-1]])
    return np.vstack([top, bot])


# ---------------------------------------------------------------------------
# Y-branch


@dataclass(frozen=True)
class YBranchGeom:
    n_ctrl: int = 10
    taper_len: float = 2.0
    w_in: float = 0.5
    w_junction: float = 1.2
    w_out: float = 0.5
    arm_gap: float = 0.2
    offset_bound: float = 0.2
    pin_ends: bool = True
    min_halfwidth: float = 0.02


def make_ybranch_spec(
    geom: YBranchGeom | None = None,
    domain_width: float = 6.0,
    domain_height: float = 4.0,
    port_inset: float = 0.6,
    min_feature: float = 0.060,
) -> DeviceSpec:
    geom = geom or YBranchGeom()
    x_port = domain_width / 2 - port_inset
    y_slice = domain_height / 2 - 0.2
    return DeviceSpec(
        kind=DeviceKind.YBRANCH,
        domain_width=domain_width,
        domain_height=domain_height,
        input_port=Port("in", -x_port, -y_slice, y_slice),
        output_ports=(Port("out", x_port, -y_slice, y_slice),),
        geom=geom,
        min_feature=min_feature,
    )


def ybranch_bounds(spec: DeviceSpec) -> DesignParams:
    g: YBranchGeom = spec.geom
    n = g.n_ctrl
    return DesignParams(np.zeros(n), -g.offset_bound * np.ones(n), g.offset_bound * np.ones(n))


def _ybranch_halfwidth(spec: DeviceSpec, values: np.ndarray):
    g: YBranchGeom = spec.geom
    if values.size != g.n_ctrl:
        raise ValidationError(
            f"Y-branch expects {g.n_ctrl} boundary offsets, got {values.size}"
        )
    half = spec.domain_width / 2
    x_ctrl = np.linspace(-g.taper_len / 2, g.taper_len / 2, g.n_ctrl)
    base = g.w_in / 2 + (g.w_junction / 2 - g.w_in / 2) * (
        (x_ctrl + g.taper_len / 2) / g.taper_len
    )
    offsets = values.copy()
    if g.pin_ends:
        offsets[0] = 0.0
        offsets[-1] = 0.0
    spline = CubicSpline(x_ctrl, base + offsets, bc_type="natural")
    xs = np.linspace(-g.taper_len / 2, g.taper_len / 2, spec.boundary_samples)
    y_top = spline(xs)
    if y_top.min() < g.min_halfwidth:
        raise ValidationError(
            f"boundary offsets pull the taper halfwidth to {y_top.min():.4f} um "
            f"(< {g.min_halfwidth} um); the boundary would self-intersect"
        )
    if y_top.max() > half - 0.1:
        raise ValidationError("boundary offsets push the taper outside the domain")
    return xs, y_top


def ybranch_polygons(spec: DeviceSpec, p) -> PolygonSet:
    """Mirror-symmetric Y-branch: fixed input stub, spline-bounded taper
    body, and two fixed output arms separated by a gap."""
    if spec.kind is not DeviceKind.YBRANCH:
        raise ValidationError(f"ybranch_polygons called with kind {spec.kind}")
    g: YBranchGeom = spec.geom
    values = param_values(p)
    xs, y_top = _ybranch_halfwidth(spec, values)
    half = spec.domain_width / 2
    x0, x1 = -g.taper_len / 2, g.taper_len / 2
    arm_lo = g.arm_gap / 2
    arm_hi = g.arm_gap / 2 + g.w_out
    return PolygonSet(
        [
            _rect(-half, x0, -g.w_in / 2, g.w_in / 2),
            _band(xs, y_top),
            _rect(x1, half, arm_lo, arm_hi),
            _rect(x1, half, -arm_hi, -arm_lo),
        ]
    )


# ---------------------------------------------------------------------------
# SWG-to-strip converter


@dataclass(frozen=True)
class SwgGeom:
    n_teeth: int = 15
    n_bridge: int = 8
    period: float = 0.240
    w_strip: float = 0.5
    w_lead: float = 0.5
    lead_duty: float = 0.5
    design_len: float = 6.0
    width_bounds: tuple[float, float] = (0.30, 0.70)
    length_bounds: tuple[float, float] = (0.06, 0.18)
    bridge_bound: float = 0.08


def make_swg_converter_spec(
    geom: SwgGeom | None = None,
    domain_width: float = 9.2,
    domain_height: float = 3.6,
    min_feature: float = 0.060,
) -> DeviceSpec:
    geom = geom or SwgGeom()
    half = domain_width / 2
    x_design1 = geom.design_len / 2  # design region is [-L/2, L/2]
    y_slice = domain_height / 2 - 0.3
    return DeviceSpec(
        kind=DeviceKind.SWG_CONVERTER,
        domain_width=domain_width,
        domain_height=domain_height,
        input_port=Port("strip", -half + 0.7, -y_slice, y_slice),
        output_ports=(
            Port("swg", x_design1 + 0.6, -y_slice, y_slice, avg_window=geom.period),
        ),
        geom=geom,
        min_feature=min_feature,
    )


def swg_bounds(spec: DeviceSpec) -> DesignParams:
    """Parameter packing: w_1..w_K, l_1..l_K, b_1..b_M. Mid-bounds is a
    uniform 50% duty grating with the linear bridge baseline."""
    g: SwgGeom = spec.geom
    k, m = g.n_teeth, g.n_bridge
    lo = np.concatenate(
        [
            np.full(k, g.width_bounds[0]),
            np.full(k, g.length_bounds[0]),
            np.maximum(-g.bridge_bound, -_bridge_baseline(g)),
        ]
    )
    hi = np.concatenate(
        [np.full(k, g.width_bounds[1]), np.full(k, g.length_bounds[1]), np.full(m, g.bridge_bound)]
    )
    return DesignParams(0.5 * (lo + hi), lo, hi)


def _bridge_baseline(g: SwgGeom) -> np.ndarray:
    """Bridge halfwidth baseline at the control points: linear from the
    strip halfwidth down to zero at the grating end."""
    t = np.linspace(0.0, 1.0, g.n_bridge)
    return g.w_strip / 2 * (1.0 - t)


def _swg_unpack(spec: DeviceSpec, values: np.ndarray):
    g: SwgGeom = spec.geom
    k, m = g.n_teeth, g.n_bridge
    if values.size != 2 * k + m:
        raise ValidationError(
            f"SWG converter expects {2 * k + m} parameters "
            f"(w_1..w_{k}, l_1..l_{k}, b_1..b_{m}), got {values.size}"
        )
    return values[:k], values[k : 2 * k], values[2 * k :]


def _swg_bridge_spline(spec: DeviceSpec, offsets: np.ndarray) -> CubicSpline:
    g: SwgGeom = spec.geom
    x_ctrl = np.linspace(-g.design_len / 2, g.design_len / 2, g.n_bridge)
    off = offsets.copy()
    off[0] = 0.0  # pinned: strip-side continuity
    off[-1] = 0.0  # pinned: bridge vanishes at the grating end
    return CubicSpline(x_ctrl, _bridge_baseline(g) + off, bc_type="natural")


def swg_converter_polygons(spec: DeviceSpec, p) -> PolygonSet:
    """SWG-to-strip converter: fixed strip stub, a solid taper section whose
    halfwidth follows the bridge spline, K grating teeth on a fixed-period
    lattice (tooth i takes l_i of its period, the remainder is gap), bridge
    bands filling the gaps, and a fixed SWG lead running into the boundary."""
    if spec.kind is not DeviceKind.SWG_CONVERTER:
        raise ValidationError(f"swg_converter_polygons called with kind {spec.kind}")
    g: SwgGeom = spec.geom
    widths, lengths, b = _swg_unpack(spec, param_values(p))

    lam = g.period
    teeth_len = g.n_teeth * lam
    if teeth_len > g.design_len + 1e-12:
        raise ValidationError(
            f"{g.n_teeth} teeth at period {lam} um exceed the {g.design_len} um design region"
        )
    for name, arr in (("width", widths), ("length", lengths)):
        small = np.flatnonzero(arr < spec.min_feature - 1e-12)
        if small.size:
            i = int(small[0])
            raise ValidationError(
                f"tooth {i + 1} {name} = {arr[i] * 1e3:.1f} nm is below the "
                f"{spec.min_feature * 1e3:.0f} nm minimum feature size"
            )
    too_long = np.flatnonzero(lengths > lam + 1e-12)
    if too_long.size:
        i = int(too_long[0])
        raise ValidationError(
            f"tooth {i + 1} length {lengths[i]} um exceeds the {lam} um period: teeth overlap"
        )
    if lengths.sum() > teeth_len + 1e-12:
        raise ValidationError("total tooth length exceeds the grating section")

    spline = _swg_bridge_spline(spec, b)
    half = spec.domain_width / 2
    x_d0, x_d1 = -g.design_len / 2, g.design_len / 2
    x_teeth0 = x_d1 - teeth_len

    def bridge_half(x):
        return np.maximum(spline(x), 0.0)

    polys = [_rect(-half, x_d0, -g.w_strip / 2, g.w_strip / 2)]

    # solid taper from the strip to the first tooth
    xs = np.linspace(x_d0, x_teeth0, max(2, int(np.ceil((x_teeth0 - x_d0) / 0.03)) + 1))
    polys.append(_band(xs, bridge_half(xs)))

    # grating teeth and gap-filling bridge bands
    for i in range(g.n_teeth):
        xa = x_teeth0 + i * lam
        xb = xa + lengths[i]
        polys.append(_rect(xa, xb, -widths[i] / 2, widths[i] / 2))
        xg = np.linspace(xb, xa + lam, 5)
        hg = bridge_half(xg)
        if xg[-1] - xg[0] > 1e-9 and hg.max() > 1e-7:
            polys.append(_band(xg, np.maximum(hg, 0.0)))

    # fixed SWG lead into the boundary
    tooth_l = g.lead_duty * lam
    x = x_d1
    while x < half - 1e-9:
        polys.append(_rect(x, min(x + tooth_l, half), -g.w_lead / 2, g.w_lead / 2))
        x += lam

    return PolygonSet(polys)


# ---------------------------------------------------------------------------
# Straight waveguide (calibration / solver checks)


@dataclass(frozen=True)
class StraightGeom:
    width: float = 0.5


def make_straight_spec(
    geom: StraightGeom | None = None,
    domain_width: float = 6.0,
    domain_height: float = 4.0,
    port_inset: float = 0.6,
) -> DeviceSpec:
    geom = geom or StraightGeom()
    x_port = domain_width / 2 - port_inset
    y_slice = domain_height / 2 - 0.2
    return DeviceSpec(
        kind=DeviceKind.STRAIGHT,
        domain_width=domain_width,
        domain_height=domain_height,
        input_port=Port("in", -x_port, -y_slice, y_slice),
        output_ports=(Port("out", x_port, -y_slice, y_slice),),
        geom=geom,
    )


def straight_polygons(spec: DeviceSpec, p=None) -> PolygonSet:
    g: StraightGeom = spec.geom
    values = param_values(p) if p is not None else np.zeros(0)
    if values.size:
        raise ValidationError("straight waveguide takes no design parameters")
    half = spec.domain_width / 2
    return PolygonSet([_rect(-half, half, -g.width / 2, g.width / 2)])


# ---------------------------------------------------------------------------
# Dispatch


_BUILDERS = {
    DeviceKind.YBRANCH: ybranch_polygons,
    DeviceKind.SWG_CONVERTER: swg_converter_polygons,
    DeviceKind.STRAIGHT: straight_polygons,
}

_BOUNDS = {
    DeviceKind.YBRANCH: ybranch_bounds,
    DeviceKind.SWG_CONVERTER: swg_bounds,
    DeviceKind.STRAIGHT: lambda spec: DesignParams(np.zeros(0), np.zeros(0), np.zeros(0)),
}


def device_polygons(spec: DeviceSpec, p) -> PolygonSet:
    return _BUILDERS[spec.kind](spec, p)


def initial_params(spec: DeviceSpec) -> DesignParams:
    """Mid-bounds starting point shared by all optimization runs."""
    return _BOUNDS[spec.kind](spec)


def fixed_polygons(spec: DeviceSpec) -> PolygonSet:
    """Only the geometry that optimization never touches. Port modes are
    solved on cross-sections of this set, which keeps them independent of
    the design parameters."""
    if spec.kind is DeviceKind.YBRANCH:
        g: YBranchGeom = spec.geom
        half = spec.domain_width / 2
        x0, x1 = -g.taper_len / 2, g.taper_len / 2
        return PolygonSet(
            [
                _rect(-half, x0, -g.w_in / 2, g.w_in / 2),
                _rect(x1, half, g.arm_gap / 2, g.arm_gap / 2 + g.w_out),
                _rect(x1, half, -g.arm_gap / 2 - g.w_out, -g.arm_gap / 2),
            ]
        )
    if spec.kind is DeviceKind.SWG_CONVERTER:
        full = swg_converter_polygons(spec, initial_params(spec))
        g: SwgGeom = spec.geom
        half = spec.domain_width / 2
        keep = [full.polygons[0]]  # strip stub
        for poly in full.polygons[1:]:
            if poly[:, 0].min() >= g.design_len / 2 - 1e-9:
                keep.append(poly)
        return PolygonSet(keep)
    return straight_polygons(spec)


def rasterize_device(spec: DeviceSpec, p, grid: GridSpec):
    return rasterize(device_polygons(spec, p), grid)


def mask_jacobian_column(spec: DeviceSpec, p, i: int, h: float, grid: GridSpec) -> np.ndarray:
    """Forward-difference column d(mask)/dp_i as a grid-shaped array.

    The perturbed vector may step slightly past the optimization bounds;
    only geometric validity is enforced here.
    """
    values = param_values(p)
    if not 0 <= i < values.size:
        raise ValidationError(f"parameter index {i} out of range for {values.size} parameters")
    if h <= 0:
        raise ValidationError(f"finite-difference step must be positive, got {h}")
    base = rasterize(device_polygons(spec, values), grid)
    shifted = values.copy()
    shifted[i] += h
    bumped = rasterize(device_polygons(spec, shifted), grid)
    return (bumped.values - base.values) / h
