"""2D scalar frequency-domain Helmholtz solver.

Discretizes div(s grad u) + k0^2 eps u on a uniform grid with complex
coordinate stretching (PML) on all four sides. Multiplying the stretched
operator through by sx*sy makes the 5-point system matrix complex
symmetric, so one sparse LU factorization serves both the forward and the
adjoint solve. Lengths in um, k0 = 2 pi / wavelength.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh_tridiagonal

from .errors import ConfigError, NoGuidedModeError, SolverError, ValidationError
from .grids import DensityGrid, GridSpec


def density_to_eps(rho: DensityGrid, eps_clad: float, eps_core: float) -> "PermittivityGrid":
    """Linear material interpolation eps = eps_clad + rho (eps_core - eps_clad)."""
    if not eps_core > eps_clad >= 1.0:
        raise ConfigError(f"need eps_core > eps_clad >= 1, got {eps_core}, {eps_clad}")
    return PermittivityGrid(rho.grid, eps_clad + rho.values * (eps_core - eps_clad))


def eps_slope(eps_clad: float, eps_core: float) -> float:
    """Constant d(eps)/d(rho) used by the gradient chain."""
    return eps_core - eps_clad


@dataclass
class PermittivityGrid:
    grid: GridSpec
    eps: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.eps = np.ascontiguousarray(self.eps, dtype=np.float64)
        if self.eps.shape != self.grid.shape:
            raise ValueError("eps shape does not match grid")
        if not np.all(np.isfinite(self.eps)) or self.eps.min() < 1.0 - 1e-12:
            raise ValueError("relative permittivity must be finite and >= 1")


class FieldKind(Enum):
    FORWARD = "forward"
    ADJOINT = "adjoint"


@dataclass
class FieldSolution:
    grid: GridSpec
    values: np.ndarray = field(repr=False)
    wavelength: float = 0.0
    kind: FieldKind = FieldKind.FORWARD
    pml: int = 0


@dataclass
class SolveCounter:
    """Counts EM solves routed through a pipeline; shared, mutable."""

    count: int = 0

    def tick(self) -> None:
        self.count += 1


def _stretch_factors(n: int, npml: int, strength: float):
    """Complex stretch s = 1 + i A d^2 at cell centers and faces, with d the
    normalized depth into the PML (quadratic conductivity grading)."""

    def s_at(pos: np.ndarray) -> np.ndarray:
        if npml == 0:
            return np.ones(pos.shape, dtype=np.complex128)
        d = np.maximum(npml - pos, pos - (n - npml)) / npml
        d = np.maximum(d, 0.0)
        return 1.0 + 1j * strength * d * d

    centers = s_at(np.arange(n) + 0.5)
    faces = s_at(np.arange(n + 1, dtype=np.float64))
    return centers, faces


@dataclass
class SystemMatrix:
    """PML-stretched Helmholtz operator as a sparse complex-symmetric matrix.

    Row/column index of cell (i, j) is i*ny + j. `eps_diag_factor` is
    d(A_kk)/d(eps_k), needed to turn adjoint products into permittivity
    sensitivities.
    """

    matrix: sp.csc_matrix = field(repr=False)
    grid: GridSpec
    wavelength: float
    pml: int
    eps_diag_factor: np.ndarray = field(repr=False)
    _lu: object = field(default=None, repr=False)

    @property
    def k0(self) -> float:
        return 2 * np.pi / self.wavelength

    def pml_mask(self) -> np.ndarray:
        """Boolean grid, True inside the absorbing layers."""
        mask = np.zeros(self.grid.shape, dtype=bool)
        if self.pml > 0:
            mask[: self.pml, :] = True
            mask[-self.pml :, :] = True
            mask[:, : self.pml] = True
            mask[:, -self.pml :] = True
        return mask

    def factorization(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self.matrix)
            except RuntimeError as exc:
                raise SolverError(f"sparse factorization failed: {exc}") from exc
        return self._lu


def assemble(
    eps: PermittivityGrid,
    wavelength: float,
    pml: int = 10,
    pml_strength: float = 30.0,
) -> SystemMatrix:
    """Assemble the 5-point stencil with symmetric PML stretching.

    pml = 0 disables the absorber entirely (test harnesses); otherwise at
    least 8 cells per side are required for the quadratic grading to work.
    """
    if wavelength <= 0:
        raise ConfigError(f"wavelength must be positive, got {wavelength}")
    if pml != 0 and pml < 8:
        raise ConfigError(f"PML must be 0 (disabled) or >= 8 cells, got {pml}")
    grid = eps.grid
    if 2 * pml >= min(grid.nx, grid.ny):
        raise ConfigError("PML layers overlap: grid too small")
    dx_max = wavelength / (15.0 * np.sqrt(eps.eps.max()))
    if grid.dx > dx_max * (1 + 1e-12):
        raise ConfigError(
            f"grid too coarse: dx = {grid.dx} um exceeds wavelength/(15 sqrt(eps_max)) "
            f"= {dx_max:.4f} um"
        )

    nx, ny = grid.nx, grid.ny
    k0 = 2 * np.pi / wavelength
    inv_dx2 = 1.0 / grid.dx**2
    sxc, sxf = _stretch_factors(nx, pml, pml_strength)
    syc, syf = _stretch_factors(ny, pml, pml_strength)

    idx = np.arange(nx * ny).reshape(nx, ny)

    # couplings across interior vertical faces (between cells i-1 and i)
    wx = (syc[None, :] / sxf[1:nx, None]) * inv_dx2  # (nx-1, ny)
    rows_x = idx[:-1, :].ravel()
    cols_x = idx[1:, :].ravel()
    vals_x = wx.ravel()

    # couplings across interior horizontal faces (between cells j-1 and j)
    wy = (sxc[:, None] / syf[None, 1:ny]) * inv_dx2  # (nx, ny-1)
    rows_y = idx[:, :-1].ravel()
    cols_y = idx[:, 1:].ravel()
    vals_y = wy.ravel()

    # diagonal: all four face couplings (Dirichlet ghosts included) plus k0^2 eps sx sy
    face_x = (1.0 / sxf[:nx, None] + 1.0 / sxf[1:, None]) * syc[None, :]
    face_y = (1.0 / syf[None, :ny] + 1.0 / syf[None, 1:]) * sxc[:, None]
    s_prod = sxc[:, None] * syc[None, :]
    diag = -(face_x + face_y) * inv_dx2 + k0**2 * eps.eps * s_prod

    rows = np.concatenate([rows_x, cols_x, rows_y, cols_y, idx.ravel()])
    cols = np.concatenate([cols_x, rows_x, cols_y, rows_y, idx.ravel()])
    vals = np.concatenate([vals_x, vals_x, vals_y, vals_y, diag.ravel()])
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(nx * ny, nx * ny)).tocsc()

    return SystemMatrix(
        matrix=matrix,
        grid=grid,
        wavelength=wavelength,
        pml=pml,
        eps_diag_factor=k0**2 * s_prod,
    )


def _check_residual(A: SystemMatrix, x: np.ndarray, b: np.ndarray) -> None:
    rel = np.linalg.norm(A.matrix @ x - b) / np.linalg.norm(b)
    if not rel < 1e-8:
        raise SolverError(
            f"direct solve residual {rel:.2e} exceeds 1e-8; the system is "
            f"ill-conditioned or singular at wavelength {A.wavelength} um"
        )


def solve_forward(A: SystemMatrix, source: np.ndarray, counter: SolveCounter | None = None) -> FieldSolution:
    """Solve A x = source by the cached sparse LU factorization."""
    source = np.asarray(source, dtype=np.complex128)
    if source.shape != A.grid.shape:
        raise ValidationError("source shape does not match grid")
    if not np.any(source):
        raise ValidationError("source is identically zero")
    if A.pml > 0 and np.any(source[A.pml_mask()]):
        raise ValidationError("source has support inside the PML")
    b = source.ravel()
    x = A.factorization().solve(b)
    _check_residual(A, x, b)
    if counter is not None:
        counter.tick()
    return FieldSolution(A.grid, x.reshape(A.grid.shape), A.wavelength, FieldKind.FORWARD, A.pml)


def solve_adjoint(A: SystemMatrix, dF_dx: np.ndarray, counter: SolveCounter | None = None) -> FieldSolution:
    """Solve A^T lambda = -(dF/dx)^T. A is complex symmetric, so the forward
    factorization is reused as-is."""
    dF_dx = np.asarray(dF_dx, dtype=np.complex128)
    if dF_dx.shape != A.grid.shape:
        raise ValidationError("dF/dx shape does not match grid")
    b = -dF_dx.ravel()
    lam = A.factorization().solve(b)
    if np.any(b):
        _check_residual(A, lam, b)
    if counter is not None:
        counter.tick()
    return FieldSolution(A.grid, lam.reshape(A.grid.shape), A.wavelength, FieldKind.ADJOINT, A.pml)


# ---------------------------------------------------------------------------
# Port modes


@dataclass
class ModeProfile:
    """Guided mode of a 1D cross-section, L2-normalized: <m, m> = 1 with
    the dx-weighted inner product. Modal power of an extracted amplitude a
    is n_eff |a|^2 in the scalar model; the flux factor enters through the
    calibrated injected power, not the stored profile."""

    port_id: str
    profile: np.ndarray = field(repr=False)
    n_eff: float = 0.0
    wavelength: float = 0.0
    dx: float = 0.0
    ix: int = -1  # grid column of the port slice (set when placed)
    j0: int = -1  # first grid row of the port slice

    def overlap(self, u_slice: np.ndarray) -> complex:
        return complex(np.vdot(self.profile, u_slice) * self.dx)


def solve_modes(eps_slice: np.ndarray, wavelength: float, dx: float, port_id: str = "") -> list[ModeProfile]:
    """Guided modes of d2/dy2 phi + k0^2 eps(y) phi = beta^2 phi, Dirichlet
    ends, sorted by descending effective index."""
    eps_slice = np.asarray(eps_slice, dtype=np.float64)
    k0 = 2 * np.pi / wavelength
    eps_edge = max(eps_slice[0], eps_slice[-1])
    if eps_slice.max() <= eps_edge + 1e-12:
        raise NoGuidedModeError("slice has no guiding region (max eps equals edge eps)")

    d = -2.0 / dx**2 + k0**2 * eps_slice
    e = np.full(eps_slice.size - 1, 1.0 / dx**2)
    lo = k0**2 * eps_edge
    hi = k0**2 * eps_slice.max()
    try:
        vals, vecs = eigh_tridiagonal(d, e, select="v", select_range=(lo, hi))
    except Exception as exc:  # eigensolver failure is a solver error
        raise SolverError(f"slab mode eigensolver failed: {exc}") from exc
    if vals.size == 0:
        raise NoGuidedModeError(
            f"no guided mode between n_eff = {np.sqrt(lo) / k0:.4f} and {np.sqrt(hi) / k0:.4f}"
        )

    modes = []
    order = np.argsort(vals)[::-1]
    for m in order:
        phi = vecs[:, m]
        phi = phi / np.sqrt(np.sum(np.abs(phi) ** 2) * dx)
        if phi[np.argmax(np.abs(phi))] < 0:
            phi = -phi
        modes.append(
            ModeProfile(
                port_id=port_id,
                profile=phi.astype(np.complex128),
                n_eff=float(np.sqrt(vals[m]) / k0),
                wavelength=wavelength,
                dx=dx,
            )
        )
    return modes


def mode_source(mode: ModeProfile, grid: GridSpec) -> np.ndarray:
    """Line current source carrying the mode profile on its port slice."""
    if mode.ix < 0 or mode.j0 < 0:
        raise ValidationError("mode has not been placed on a grid slice")
    src = np.zeros(grid.shape, dtype=np.complex128)
    src[mode.ix, mode.j0 : mode.j0 + mode.profile.size] = mode.profile
    return src


# ---------------------------------------------------------------------------
# Figure of merit


@dataclass(frozen=True)
class FomValue:
    """Power transmission and the equivalent insertion loss in dB."""

    transmission: float

    def __post_init__(self):
        if not np.isfinite(self.transmission) or not -1e-12 <= self.transmission <= 1 + 1e-6:
            raise ValueError(f"transmission {self.transmission} outside [0, 1]")

    @property
    def insertion_loss_db(self) -> float:
        if self.transmission <= 0:
            return np.inf
        return -10.0 * np.log10(self.transmission)


def mode_overlap_fom(x: FieldSolution, mode: ModeProfile, p_in: float = 1.0):
    """Transmission T = |<mode, x|_slice>|^2 / p_in and its analytic field
    derivative (Wirtinger dF/dx, nonzero only on the slice), which feeds the
    adjoint source. p_in is the injected modal power, calibrated by the
    pipeline with the cross-port flux factor included."""
    if mode.ix < 0 or mode.j0 < 0:
        raise ValidationError("mode has not been placed on a grid slice")
    n = mode.profile.size
    if not (0 <= mode.ix < x.grid.nx and 0 <= mode.j0 and mode.j0 + n <= x.grid.ny):
        raise ValidationError(f"port slice for {mode.port_id!r} lies outside the grid")
    u = x.values[mode.ix, mode.j0 : mode.j0 + n]
    a = mode.overlap(u)
    fom = FomValue(abs(a) ** 2 / p_in)
    dF_dx = np.zeros(x.grid.shape, dtype=np.complex128)
    dF_dx[mode.ix, mode.j0 : mode.j0 + n] = np.conj(a) * np.conj(mode.profile) * mode.dx / p_in
    return fom, dF_dx


@dataclass
class SensitivityField:
    """Per-cell dF/d(eps), zero inside the PML."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError("sensitivity shape does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sensitivity contains non-finite values")


def sensitivity_field(forward: FieldSolution, adjoint: FieldSolution) -> SensitivityField:
    """dF/d(eps_cell) = 2 Re(lambda_cell k0^2 x_cell), read directly off the
    grid. The product is unconjugated: the adjoint solve already accounts
    for the conjugate-linear half of the real-valued objective."""
    if forward.grid != adjoint.grid:
        raise ValidationError("forward and adjoint solutions live on different grids")
    if forward.wavelength != adjoint.wavelength:
        raise ValidationError("forward and adjoint solutions have different wavelengths")
    k0 = 2 * np.pi / forward.wavelength
    values = 2.0 * k0**2 * np.real(adjoint.values * forward.values)
    pml = max(forward.pml, adjoint.pml)
    if pml > 0:
        values = values.copy()
        values[:pml, :] = 0.0
        values[-pml:, :] = 0.0
        values[:, :pml] = 0.0
        values[:, -pml:] = 0.0
    return SensitivityField(forward.grid, values)
