"""Line-oriented run configuration: ``section.key = value``.

Keys are strict: unknown keys are rejected, and the two keys without
defaults (device.kind, grid.dx_nm) must be present. Length units are part
of the key name: feature-scale keys carry ``_nm``, domain-scale keys
``_um``. ``#`` starts a comment.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .devices import (
    StraightGeom,
    SwgGeom,
    YBranchGeom,
    make_straight_spec,
    make_swg_converter_spec,
    make_ybranch_spec,
)
from .errors import ConfigError
from .geometry import DeviceKind, DeviceSpec
from .grids import GridSpec
from .gradients import Pipeline
from .litho import (
    ExternalPredictorConfig,
    ExternalPredictorModel,
    GaussianThresholdModel,
    GaussianThresholdParams,
    IdentityModel,
)
from .optim import OptConfig, fingerprint_config

_REQUIRED = object()


def _bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _float_list(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.replace(",", " ").split())


_SCHEMA: dict[str, dict[str, tuple]] = {
    "device": {
        "kind": (str, _REQUIRED),
        "domain_width_um": (float, None),
        "domain_height_um": (float, None),
        "min_feature_nm": (float, 60.0),
        # Y-branch
        "n_ctrl": (int, 10),
        "offset_bound_um": (float, 0.2),
        "pin_ends": (_bool, True),
        # SWG converter
        "n_teeth": (int, 15),
        "n_bridge": (int, 8),
        "period_nm": (float, 240.0),
        "width_min_um": (float, 0.30),
        "width_max_um": (float, 0.70),
        "length_min_um": (float, 0.06),
        "length_max_um": (float, 0.18),
        "bridge_bound_um": (float, 0.08),
        # straight waveguide
        "wg_width_um": (float, 0.5),
    },
    "grid": {
        "dx_nm": (float, _REQUIRED),
        "pml_cells": (int, 10),
        "pml_strength": (float, 30.0),
    },
    "materials": {
        "eps_core": (float, 2.85**2),
        "eps_clad": (float, 1.444**2),
    },
    "wavelengths": {
        "values_um": (_float_list, ()),
        "sweep_start_um": (float, 0.0),
        "sweep_stop_um": (float, 0.0),
        "sweep_points": (int, 0),
    },
    "litho": {
        "model": (str, "identity"),
        "sigma_nm": (float, 80.0),
        "eta": (float, 0.5),
        "beta": (float, 10.0),
        "eta_shift": (float, 0.0),
        "command": (str, ""),
        "exchange_dir": (str, ""),
        "timeout_s": (float, 60.0),
    },
    "optimizer": {
        "max_iterations": (int, 100),
        "history": (int, 8),
        "grad_tol": (float, 1e-5),
        "initial_step": (float, 1.0),
        "c1": (float, 1e-4),
        "max_linesearch": (int, 20),
    },
    "gradcheck": {
        "step_nm": (float, 1.0),
        "threshold": (float, 0.01),
    },
    "output": {
        "dir": (str, "out"),
    },
    "run": {
        "seed": (int, 0),
        "threads": (int, 1),
    },
}


@dataclass
class RunConfig:
    """Parsed and fully defaulted configuration tree."""

    raw: dict[str, dict[str, object]]

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.raw[section][key]

    def canonical_dump(self) -> str:
        lines = []
        for section in sorted(self.raw):
            for key in sorted(self.raw[section]):
                lines.append(f"{section}.{key} = {self.raw[section][key]!r}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return fingerprint_config(self.canonical_dump())

    # -- derived objects ---------------------------------------------------

    def wavelengths(self) -> tuple[float, ...]:
        values = self["wavelengths.values_um"]
        n = self["wavelengths.sweep_points"]
        if values and n:
            raise ConfigError(
                "give either wavelengths.values_um or a sweep, not both"
            )
        if n:
            start = self["wavelengths.sweep_start_um"]
            stop = self["wavelengths.sweep_stop_um"]
            if not 0 < start <= stop:
                raise ConfigError("bad wavelength sweep: need 0 < sweep_start_um <= sweep_stop_um")
            return tuple(np.linspace(start, stop, n))
        return values or (1.320,)

    def device(self) -> DeviceSpec:
        kind = self["device.kind"]
        min_feature = self["device.min_feature_nm"] * 1e-3
        domain_kwargs = {}
        if self["device.domain_width_um"] is not None:
            domain_kwargs["domain_width"] = self["device.domain_width_um"]
        if self["device.domain_height_um"] is not None:
            domain_kwargs["domain_height"] = self["device.domain_height_um"]
        if kind == "ybranch":
            geom = YBranchGeom(
                n_ctrl=self["device.n_ctrl"],
                offset_bound=self["device.offset_bound_um"],
                pin_ends=self["device.pin_ends"],
            )
            return make_ybranch_spec(geom, min_feature=min_feature, **domain_kwargs)
        if kind == "swg_converter":
            geom = SwgGeom(
                n_teeth=self["device.n_teeth"],
                n_bridge=self["device.n_bridge"],
                period=self["device.period_nm"] * 1e-3,
                width_bounds=(self["device.width_min_um"], self["device.width_max_um"]),
                length_bounds=(self["device.length_min_um"], self["device.length_max_um"]),
                bridge_bound=self["device.bridge_bound_um"],
            )
            return make_swg_converter_spec(geom, min_feature=min_feature, **domain_kwargs)
        if kind == "straight":
            return make_straight_spec(StraightGeom(width=self["device.wg_width_um"]), **domain_kwargs)
        raise ConfigError(
            f"device.kind must be ybranch, swg_converter, or straight, got {kind!r}"
        )

    def grid(self, spec: DeviceSpec) -> GridSpec:
        dx = self["grid.dx_nm"] * 1e-3
        nx = round(spec.domain_width / dx)
        ny = round(spec.domain_height / dx)
        if abs(nx * dx - spec.domain_width) > 1e-9 or abs(ny * dx - spec.domain_height) > 1e-9:
            raise ConfigError(
                f"domain {spec.domain_width} x {spec.domain_height} um is not a whole "
                f"number of {self['grid.dx_nm']} nm cells"
            )
        return GridSpec(nx, ny, dx, -spec.domain_width / 2, -spec.domain_height / 2)

    def litho_model(self):
        kind = self["litho.model"]
        if kind == "identity":
            return IdentityModel()
        if kind in ("gaussian", "duv", "ebl"):
            sigma = {"duv": 80.0, "ebl": 30.0}.get(kind, self["litho.sigma_nm"])
            return GaussianThresholdModel(
                GaussianThresholdParams(
                    sigma_nm=sigma,
                    eta=self["litho.eta"],
                    beta=self["litho.beta"],
                    eta_shift=self["litho.eta_shift"],
                )
            )
        if kind == "external":
            if not self["litho.command"]:
                raise ConfigError("litho.command is required for litho.model = external")
            exchange = self["litho.exchange_dir"] or str(Path(self["output.dir"]) / "exchange")
            return ExternalPredictorModel(
                ExternalPredictorConfig(
                    command=self["litho.command"],
                    exchange_dir=exchange,
                    timeout_s=self["litho.timeout_s"],
                )
            )
        raise ConfigError(
            f"litho.model must be identity, gaussian, duv, ebl, or external, got {kind!r}"
        )

    def opt_config(self) -> OptConfig:
        return OptConfig(
            max_iterations=self["optimizer.max_iterations"],
            history=self["optimizer.history"],
            grad_tol=self["optimizer.grad_tol"],
            initial_step=self["optimizer.initial_step"],
            c1=self["optimizer.c1"],
            max_linesearch=self["optimizer.max_linesearch"],
        )

    def pipeline(self, litho=None) -> Pipeline:
        spec = self.device()
        return Pipeline(
            device=spec,
            grid=self.grid(spec),
            litho=litho if litho is not None else self.litho_model(),
            eps_clad=self["materials.eps_clad"],
            eps_core=self["materials.eps_core"],
            wavelengths=self.wavelengths(),
            pml=self["grid.pml_cells"],
            n_threads=self["run.threads"],
        )


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, dict[str, object]] = {s: {} for s in _SCHEMA}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw_line!r}")
        dotted, _, raw_value = line.partition("=")
        dotted = dotted.strip()
        raw_value = raw_value.strip()
        if "." not in dotted:
            raise ConfigError(f"{source}:{lineno}: key {dotted!r} is missing its section prefix")
        section, key = dotted.split(".", 1)
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"{source}:{lineno}: unknown config key '{section}.{key}'")
        if key in values[section]:
            raise ConfigError(f"{source}:{lineno}: duplicate config key '{section}.{key}'")
        ctor = _SCHEMA[section][key][0]
        try:
            values[section][key] = ctor(raw_value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for '{section}.{key}': {exc}") from exc

    for section, keys in _SCHEMA.items():
        for key, (_, default) in keys.items():
            if key in values[section]:
                continue
            if default is _REQUIRED:
                raise ConfigError(f"{source}: missing required config key '{section}.{key}'")
            values[section][key] = default
    return RunConfig(values)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path))
