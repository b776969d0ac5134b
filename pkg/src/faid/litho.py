"""Lithography prediction models.

All models map a mask DensityGrid to a predicted DensityGrid of the same
shape. The built-in surrogate is a separable Gaussian blur (proximity
effects, corner rounding, line shortening) followed by a smooth tanh
threshold (resist development); it provides an exact vector-Jacobian
product for the differentiable gradient path. Non-differentiable
predictors run out of process through a file-exchange client.
"""

from __future__ import annotations

import shlex
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .errors import (
    ConfigError,
    ExternalPredictorFailed,
    ExternalPredictorOutputError,
    ExternalPredictorTimeout,
    NonDifferentiableModelError,
)
from .grids import DensityGrid, load_density_grid, save_density_grid


@dataclass(frozen=True)
class GaussianThresholdParams:
    """sigma_nm: blur radius; eta: threshold in (0, 1); beta: projection
    steepness. eta_shift is an optional uniform threshold bias (etch bias
    emulation), default off."""

    sigma_nm: float = 80.0
    eta: float = 0.5
    beta: float = 10.0
    eta_shift: float = 0.0

    def __post_init__(self):
        if self.sigma_nm < 0:
            raise ConfigError(f"sigma must be >= 0 nm, got {self.sigma_nm}")
        eta = self.eta + self.eta_shift
        if not 0 < eta < 1:
            raise ConfigError(f"effective threshold {eta} must lie in (0, 1)")
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")


def duv_like() -> "GaussianThresholdModel":
    """Surrogate preset with DUV-scale proximity blur."""
    return GaussianThresholdModel(GaussianThresholdParams(sigma_nm=80.0))


def ebl_like() -> "GaussianThresholdModel":
    """Surrogate preset with the milder EBL-scale blur."""
    return GaussianThresholdModel(GaussianThresholdParams(sigma_nm=30.0))


def _gauss_kernel(sigma_cells: float) -> np.ndarray:
    """1D Gaussian, truncated at 4 sigma, renormalized to unit sum."""
    radius = int(np.ceil(4.0 * sigma_cells))
    if radius == 0:
        return np.ones(1)
    t = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (t / sigma_cells) ** 2)
    return k / k.sum()


def _blur_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Convolution along one axis with edge-replication padding."""
    r = kernel.size // 2
    if r == 0:
        return arr
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    padded = np.pad(arr, pad, mode="edge")
    out = convolve1d(padded, kernel, axis=axis, mode="constant")
    sl = [slice(None), slice(None)]
    sl[axis] = slice(r, -r)
    return out[tuple(sl)]


def _blur_axis_adjoint(cot: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Exact transpose of _blur_axis: zero-embed, convolve (the symmetric
    kernel is self-adjoint under zero fill), then fold the padded strips
    back onto the edge rows they were replicated from."""
    r = kernel.size // 2
    if r == 0:
        return cot
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    embedded = np.pad(cot, pad, mode="constant")
    spread = convolve1d(embedded, kernel, axis=axis, mode="constant")
    lead = [slice(None), slice(None)]
    lead[axis] = slice(0, r)
    tail = [slice(None), slice(None)]
    tail[axis] = slice(-r, None)
    core = [slice(None), slice(None)]
    core[axis] = slice(r, -r)
    out = spread[tuple(core)].copy()
    first = [slice(None), slice(None)]
    first[axis] = slice(0, 1)
    last = [slice(None), slice(None)]
    last[axis] = slice(-1, None)
    out[tuple(first)] += spread[tuple(lead)].sum(axis=axis, keepdims=True)
    out[tuple(last)] += spread[tuple(tail)].sum(axis=axis, keepdims=True)
    return out


def _sech2(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return (2.0 / (np.exp(x) + np.exp(-x))) ** 2


class GaussianThresholdModel:
    """Differentiable convolve-and-threshold lithography surrogate."""

    differentiable = True

    def __init__(self, params: GaussianThresholdParams | None = None):
        self.params = params or GaussianThresholdParams()

    def _kernel(self, mask: DensityGrid) -> np.ndarray:
        grid = mask.grid
        sigma_um = self.params.sigma_nm * 1e-3
        if sigma_um > 0.5 * min(grid.width, grid.height):
            raise ConfigError(
                f"blur sigma {self.params.sigma_nm} nm exceeds half the grid extent"
            )
        return _gauss_kernel(sigma_um / grid.dx)

    def _blur(self, values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
        return _blur_axis(_blur_axis(values, kernel, 0), kernel, 1)

    def _projection_pieces(self):
        eta = self.params.eta + self.params.eta_shift
        beta = self.params.beta
        denom = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
        return eta, beta, denom

    def predict(self, mask: DensityGrid) -> DensityGrid:
        kernel = self._kernel(mask)
        smooth = self._blur(mask.values, kernel)
        eta, beta, denom = self._projection_pieces()
        projected = (np.tanh(beta * eta) + np.tanh(beta * (smooth - eta))) / denom
        return DensityGrid(mask.grid, np.clip(projected, 0.0, 1.0))

    def vjp(self, mask: DensityGrid, cotangent: np.ndarray) -> np.ndarray:
        """Exact J^T cot: diagonal projection derivative, then the blur
        adjoint (applied per axis in reverse order)."""
        cotangent = np.asarray(cotangent, dtype=np.float64)
        if cotangent.shape != mask.grid.shape:
            raise ValueError("cotangent shape does not match grid")
        kernel = self._kernel(mask)
        smooth = self._blur(mask.values, kernel)
        eta, beta, denom = self._projection_pieces()
        t = cotangent * (beta * _sech2(beta * (smooth - eta)) / denom)
        return _blur_axis_adjoint(_blur_axis_adjoint(t, kernel, 1), kernel, 0)


class IdentityModel:
    """Ideal process: the predicted geometry is the mask."""

    differentiable = True

    def predict(self, mask: DensityGrid) -> DensityGrid:
        return DensityGrid(mask.grid, mask.values.copy())

    def vjp(self, mask: DensityGrid, cotangent: np.ndarray) -> np.ndarray:
        cotangent = np.asarray(cotangent, dtype=np.float64)
        if cotangent.shape != mask.grid.shape:
            raise ValueError("cotangent shape does not match grid")
        return cotangent.copy()


@dataclass(frozen=True)
class ExternalPredictorConfig:
    """command is a shell-style template whose arguments may contain the
    {input} and {output} placeholders; the exchange directory holds the
    density-grid files passed across the process boundary."""

    command: str
    exchange_dir: str
    timeout_s: float = 60.0


class ExternalPredictorModel:
    """File-exchange client for out-of-process lithography predictors.

    Calls are serialized per instance; run several instances with distinct
    exchange directories for concurrency. No vjp is available: route
    gradients through the numeric perturbation path.
    """

    differentiable = False

    def __init__(self, config: ExternalPredictorConfig):
        if "{input}" not in config.command or "{output}" not in config.command:
            raise ConfigError("external command must contain {input} and {output} placeholders")
        self.config = config
        self._lock = threading.Lock()
        self._template = shlex.split(config.command)

    def predict(self, mask: DensityGrid) -> DensityGrid:
        with self._lock:
            exchange = Path(self.config.exchange_dir)
            exchange.mkdir(parents=True, exist_ok=True)
            in_path = exchange / "mask.fdg"
            out_path = exchange / "predicted.fdg"
            if out_path.exists():
                out_path.unlink()
            save_density_grid(in_path, mask)
            argv = [
                a.replace("{input}", str(in_path)).replace("{output}", str(out_path))
                for a in self._template
            ]
            try:
                proc = subprocess.run(
                    argv,
                    capture_output=True,
                    text=True,
                    timeout=self.config.timeout_s,
                )
            except subprocess.TimeoutExpired as exc:
                raise ExternalPredictorTimeout(
                    f"external predictor exceeded {self.config.timeout_s} s"
                ) from exc
            if proc.returncode != 0:
                tail = proc.stderr.strip().splitlines()[-3:]
                raise ExternalPredictorFailed(
                    f"external predictor exited {proc.returncode}: {' / '.join(tail)}"
                )
            if not out_path.exists():
                raise ExternalPredictorOutputError(f"predictor wrote no output at {out_path}")
            try:
                predicted = load_density_grid(out_path)
            except Exception as exc:
                raise ExternalPredictorOutputError(f"bad predictor output: {exc}") from exc
            if predicted.grid.shape != mask.grid.shape:
                raise ExternalPredictorOutputError(
                    f"predictor changed the grid shape: {predicted.grid.shape} "
                    f"vs {mask.grid.shape}"
                )
            return DensityGrid(mask.grid, predicted.values)

    def vjp(self, mask: DensityGrid, cotangent: np.ndarray) -> np.ndarray:
        raise NonDifferentiableModelError(
            "external predictors expose no Jacobian; use the numeric perturbation path"
        )
