"""Figure-of-merit evaluation through a lithography model and the three
dF/dp paths.

Every evaluation routes the mask through the lithography model before the
EM solve, so the optimizer only ever sees the predicted geometry. The
parameter factorization is

    p -> polygons -> mask grid -> litho.predict -> eps -> field -> F

with d(mask)/dp obtained by per-parameter geometric differencing (no EM
solves, no litho calls). The three gradient routes differ only in how they
cross the litho stage:

* chain rule: adjoint sensitivity on the predicted geometry, pulled back
  through the model's exact vector-Jacobian product;
* numeric perturbation: the same adjoint sensitivity contracted against
  finite differences of litho.predict (works for non-differentiable
  models; still exactly 2 EM solves per wavelength);
* brute force: central differences of the full evaluation, the
  verification oracle.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .devices import device_polygons, fixed_polygons
from .errors import ConfigError, FaidError, NonDifferentiableModelError, ValidationError
from .fdfd import (
    FomValue,
    ModeProfile,
    SolveCounter,
    assemble,
    density_to_eps,
    eps_slope,
    mode_overlap_fom,
    mode_source,
    sensitivity_field,
    solve_adjoint,
    solve_forward,
    solve_modes,
)
from .geometry import DeviceSpec, Port, param_values
from .grids import DensityGrid, GridSpec
from .raster import rasterize


class GradientMethod(Enum):
    CHAIN_RULE = "chain_rule"
    NUMERIC_PERTURBATION = "numeric_perturbation"
    BRUTE_FORCE = "brute_force"


@dataclass
class GradientResult:
    fom: FomValue
    grad: np.ndarray
    per_wavelength: tuple[FomValue, ...]
    method: GradientMethod

    def __post_init__(self):
        if not np.all(np.isfinite(self.grad)):
            raise ValueError("gradient contains non-finite components")


@dataclass
class _WavelengthState:
    wavelength: float
    matrix: object
    forward: object
    fom: FomValue
    dF_dx: np.ndarray


@dataclass
class _EvalState:
    values: np.ndarray
    mask: DensityGrid
    predicted: DensityGrid
    per_wl: list[_WavelengthState]

    @property
    def fom(self) -> FomValue:
        return FomValue(float(np.mean([w.fom.transmission for w in self.per_wl])))

    def per_wavelength_foms(self) -> tuple[FomValue, ...]:
        return tuple(w.fom for w in self.per_wl)


@dataclass
class Pipeline:
    """One device + grid + materials + lithography model + wavelengths.

    Port modes and the injected-power calibration are solved once per
    wavelength on the fixed access geometry and cached; they do not depend
    on the design parameters.
    """

    device: DeviceSpec
    grid: GridSpec
    litho: object
    eps_clad: float = 1.444**2
    eps_core: float = 2.85**2
    wavelengths: tuple[float, ...] = (1.320,)
    pml: int = 10
    fd_step: float = 1e-3  # um, geometric differencing step
    n_threads: int = 1
    counter: SolveCounter = field(default_factory=SolveCounter)

    def __post_init__(self):
        if len(self.wavelengths) < 1:
            raise ConfigError("at least one wavelength is required")
        self.wavelengths = tuple(float(w) for w in self.wavelengths)
        self._fixed_mask: DensityGrid | None = None
        self._modes: dict[float, tuple[ModeProfile, tuple[ModeProfile, ...]]] = {}
        self._p_ref: dict[float, float] = {}

    # -- fixed-geometry machinery -------------------------------------------------

    def fixed_mask(self) -> DensityGrid:
        if self._fixed_mask is None:
            self._fixed_mask = rasterize(fixed_polygons(self.device), self.grid)
        return self._fixed_mask

    def _port_slice(self, port: Port) -> tuple[int, int, int]:
        g = self.grid
        ix = g.x_index(port.x)
        j0 = g.y_index(port.y_min)
        j1 = g.y_index(port.y_max) + 1
        return ix, j0, j1

    def _port_eps_column(self, port: Port) -> np.ndarray:
        mask = self.fixed_mask()
        ix, j0, j1 = self._port_slice(port)
        if port.avg_window > 0:
            w = max(1, int(round(port.avg_window / self.grid.dx)))
            i0 = max(0, ix - w // 2)
            rho = mask.values[i0 : i0 + w, j0:j1].mean(axis=0)
        else:
            rho = mask.values[ix, j0:j1]
        return self.eps_clad + rho * (self.eps_core - self.eps_clad)

    def port_mode(self, port: Port, wavelength: float) -> ModeProfile:
        """Fundamental guided mode of the port cross-section, placed on the
        port's grid slice."""
        eps_col = self._port_eps_column(port)
        mode = solve_modes(eps_col, wavelength, self.grid.dx, port_id=port.name)[0]
        ix, j0, _ = self._port_slice(port)
        mode.ix = ix
        mode.j0 = j0
        return mode

    def _modes_at(self, wavelength: float):
        if wavelength not in self._modes:
            m_in = self.port_mode(self.device.input_port, wavelength)
            m_out = tuple(self.port_mode(p, wavelength) for p in self.device.output_ports)
            self._modes[wavelength] = (m_in, m_out)
        return self._modes[wavelength]

    def _calibration(self, wavelength: float) -> float:
        """Injected modal power |a_ref|^2, measured in a reference run on
        the input cross-section extruded along the whole domain (passed
        through the same lithography model for consistency)."""
        if wavelength not in self._p_ref:
            m_in, _ = self._modes_at(wavelength)
            column = self.fixed_mask().values[m_in.ix, :]
            ref_mask = DensityGrid(self.grid, np.tile(column, (self.grid.nx, 1)))
            ref_eps = density_to_eps(
                self.litho.predict(ref_mask), self.eps_clad, self.eps_core
            )
            A = assemble(ref_eps, wavelength, self.pml)
            fwd = solve_forward(A, mode_source(m_in, self.grid), self.counter)
            ix_out = self.grid.x_index(self.device.output_ports[0].x)
            u = fwd.values[ix_out, m_in.j0 : m_in.j0 + m_in.profile.size]
            self._p_ref[wavelength] = abs(m_in.overlap(u)) ** 2
        return self._p_ref[wavelength]

    def warm_up(self) -> None:
        """Resolve all cached modes and calibrations (useful before
        counting EM solves)."""
        for wl in self.wavelengths:
            self._calibration(wl)

    # -- evaluation ----------------------------------------------------------------

    def design_mask(self, p) -> DensityGrid:
        return rasterize(device_polygons(self.device, param_values(p)), self.grid)

    def _evaluate(self, values: np.ndarray) -> _EvalState:
        mask = self.design_mask(values)
        predicted = self.litho.predict(mask)
        epsg = density_to_eps(predicted, self.eps_clad, self.eps_core)
        per_wl = []
        for wl in self.wavelengths:
            p_ref = self._calibration(wl)
            m_in, m_out = self._modes_at(wl)
            A = assemble(epsg, wl, self.pml)
            fwd = solve_forward(A, mode_source(m_in, self.grid), self.counter)
            t_total = 0.0
            dF_dx = np.zeros(self.grid.shape, dtype=np.complex128)
            for mode in m_out:
                p_in = p_ref * m_in.n_eff / mode.n_eff
                fom_o, d = mode_overlap_fom(fwd, mode, p_in)
                t_total += fom_o.transmission
                dF_dx += d
            per_wl.append(_WavelengthState(wl, A, fwd, FomValue(t_total), dF_dx))
        return _EvalState(values, mask, predicted, per_wl)

    def eval_fom(self, p) -> FomValue:
        """Mean transmission over the configured wavelengths, evaluated on
        the lithography-predicted geometry."""
        return self._evaluate(param_values(p)).fom

    # -- shared gradient plumbing ----------------------------------------------

    def _adjoint_cotangent(self, state: _EvalState) -> np.ndarray:
        """dF/d(rho_hat) as a grid: adjoint sensitivities averaged over
        wavelengths, scaled by the constant d(eps)/d(rho)."""
        cot = np.zeros(self.grid.shape)
        for w in state.per_wl:
            adj = solve_adjoint(w.matrix, w.dF_dx, self.counter)
            cot += sensitivity_field(w.forward, adj).values
        cot *= eps_slope(self.eps_clad, self.eps_core) / len(state.per_wl)
        return cot

    def _map(self, fn, items):
        if self.n_threads > 1:
            with ThreadPoolExecutor(max_workers=self.n_threads) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]


def _perturbed_masks(pipeline: Pipeline, values: np.ndarray, h: float):
    """Rasterized masks at p + h e_i for every i, with index-tagged errors."""

    def one(i: int) -> np.ndarray:
        shifted = values.copy()
        shifted[i] += h
        try:
            return pipeline.design_mask(shifted).values
        except FaidError as exc:
            raise type(exc)(f"parameter {i}: {exc}") from exc

    return pipeline._map(one, range(values.size))


def grad_chain_rule(pipeline: Pipeline, p, h: float | None = None) -> GradientResult:
    """dF/dp through the differentiable chain: adjoint sensitivity on the
    predicted geometry, pulled back through the litho model's vjp, then
    contracted with the geometric mask Jacobian."""
    if not getattr(pipeline.litho, "differentiable", False):
        raise NonDifferentiableModelError(
            "chain-rule gradient requires a differentiable lithography model"
        )
    h = pipeline.fd_step if h is None else h
    if h <= 0:
        raise ValidationError(f"geometric differencing step must be positive, got {h}")
    values = param_values(p)
    state = pipeline._evaluate(values)
    cot = pipeline._adjoint_cotangent(state)
    c_mask = pipeline.litho.vjp(state.mask, cot)
    base = state.mask.values
    masks = _perturbed_masks(pipeline, values, h)
    grad = np.array([float(np.sum(c_mask * (m - base)) / h) for m in masks])
    return GradientResult(state.fom, grad, state.per_wavelength_foms(), GradientMethod.CHAIN_RULE)


def grad_numeric_perturbation(pipeline: Pipeline, p, h: float | None = None) -> GradientResult:
    """dF/dp for arbitrary (possibly non-differentiable) litho models: the
    adjoint sensitivity is contracted against finite differences of the
    model's prediction. Exactly 2 EM solves per wavelength, independent of
    the parameter count."""
    h = pipeline.fd_step if h is None else h
    if h <= 0:
        raise ValidationError(f"perturbation step must be positive, got {h}")
    values = param_values(p)
    state = pipeline._evaluate(values)
    cot = pipeline._adjoint_cotangent(state)
    base_pred = state.predicted.values

    masks = _perturbed_masks(pipeline, values, h)

    def one(i: int) -> float:
        try:
            pred_i = pipeline.litho.predict(DensityGrid(pipeline.grid, masks[i])).values
        except FaidError as exc:
            raise type(exc)(f"parameter {i}: {exc}") from exc
        return float(np.sum(cot * (pred_i - base_pred)) / h)

    grad = np.array(pipeline._map(one, range(values.size)))
    return GradientResult(
        state.fom, grad, state.per_wavelength_foms(), GradientMethod.NUMERIC_PERTURBATION
    )


def grad_brute_force(pipeline: Pipeline, p, h: float | None = None) -> GradientResult:
    """Central differences of the full pipeline evaluation; the
    verification oracle for the two adjoint paths."""
    h = pipeline.fd_step if h is None else h
    if h <= 0:
        raise ValidationError(f"finite-difference step must be positive, got {h}")
    values = param_values(p)
    if values.size > 60:
        warnings.warn(
            f"brute-force gradient over {values.size} parameters needs "
            f"{2 * values.size} full solves per wavelength",
            stacklevel=2,
        )
    state = pipeline._evaluate(values)

    def one(i: int) -> float:
        up = values.copy()
        up[i] += h
        dn = values.copy()
        dn[i] -= h
        f_up = pipeline._evaluate(up).fom.transmission
        f_dn = pipeline._evaluate(dn).fom.transmission
        return (f_up - f_dn) / (2 * h)

    grad = np.array(pipeline._map(one, range(values.size)))
    return GradientResult(state.fom, grad, state.per_wavelength_foms(), GradientMethod.BRUTE_FORCE)
