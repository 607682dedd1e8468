"""(driving frequency, exchange coupling) sweep engine.

Each cell of the sweep propagates the probe over an orientation grid,
reduces the per-orientation metrology table to one row (orientation of the
best CFI/QFI ratio, grid-level yield anisotropy), and appends the formatted
row to a checkpoint file as soon as it completes. Output files are written
in deterministic nu-major order with 9-significant-digit floats, so
identical inputs produce byte-identical files at any worker count, and an
interrupted sweep resumes from the checkpoint without recomputation.
"""

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ModelConfig, load_config
from .errors import ConfigError, RpmagError
from .metrology import (
    FLAG_FILTERED,
    FLAG_RATIO_UNDEFINED,
    OrientationGrid,
    orientation_report,
)
from .dynamics import IntegratorConfig, default_config
from .model import FieldSpec, Geometry, HarmonicMotion, StaticMotion

COLUMNS = (
    "nu_d_MHz",
    "J0_over_2pi_MHz",
    "theta_rad",
    "phi_rad",
    "Phi_S",
    "Gamma",
    "F_theta",
    "QFI_theta",
    "ratio",
    "ratio_mean",
    "flags",
)

FILTER_MODES = ("none", "maintained", "threshold")


def fmt(value) -> str:
    """9-significant-digit float formatting; empty field for absent values."""
    if value is None:
        return ""
    return "%.9g" % value


@dataclass(frozen=True)
class SweepSpec:
    """Sweep axes, orientation grid, toggles, and filtering."""

    nu_min_MHz: float
    nu_max_MHz: float
    nu_count: int
    nu_log: bool = False
    j_min_MHz: float = 0.0
    j_max_MHz: float = 0.0
    j_count: int = 1
    grid_theta: int = 19
    grid_phi: int = 1
    phi_fixed: float = 0.0
    delta_d_A: float = 3.0
    rfr_gamma: float = 0.0
    dipolar: bool | None = None
    exchange: bool | None = None
    filter_mode: str = "none"
    filter_fraction: float = 0.1
    fd_check: bool = False
    dtheta: float = 1e-3
    dt_us: float | None = None
    t_max_us: float | None = None

    def __post_init__(self):
        if self.nu_count < 1 or self.j_count < 1:
            raise ConfigError("sweep counts must be >= 1")
        if self.nu_count > 1 and self.nu_max_MHz < self.nu_min_MHz:
            raise ConfigError("driving-frequency range must be ordered")
        if self.j_count > 1 and self.j_max_MHz < self.j_min_MHz:
            raise ConfigError("exchange range must be ordered")
        if self.filter_mode not in FILTER_MODES:
            raise ConfigError(f"unknown filter mode {self.filter_mode!r}")

    def nu_values(self) -> np.ndarray:
        if self.nu_count == 1:
            return np.array([self.nu_min_MHz])
        if self.nu_log:
            if self.nu_min_MHz <= 0:
                raise ConfigError("log spacing needs a positive minimum frequency")
            return np.geomspace(self.nu_min_MHz, self.nu_max_MHz, self.nu_count)
        return np.linspace(self.nu_min_MHz, self.nu_max_MHz, self.nu_count)

    def j_values(self) -> np.ndarray:
        if self.j_count == 1:
            return np.array([self.j_min_MHz])
        return np.linspace(self.j_min_MHz, self.j_max_MHz, self.j_count)

    def orientation_grid(self) -> OrientationGrid:
        if self.grid_phi == 1:
            return OrientationGrid.theta_line(self.grid_theta, phi=self.phi_fixed)
        return OrientationGrid.full(self.grid_theta, self.grid_phi)

    def spec_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _apply_toggles(geometry: Geometry, spec: SweepSpec, j0_over_2pi_MHz: float) -> Geometry:
    return Geometry(
        r0_A=geometry.r0_A,
        axis=geometry.axis,
        j0_rad_us=2.0 * np.pi * j0_over_2pi_MHz,
        beta_per_A=geometry.beta_per_A,
        dipolar_enabled=geometry.dipolar_enabled if spec.dipolar is None else spec.dipolar,
        exchange_enabled=geometry.exchange_enabled if spec.exchange is None else spec.exchange,
    )


def _integrator(model: ModelConfig, geometry, motion, spec: SweepSpec):
    if spec.dt_us is None and spec.t_max_us is None:
        return None
    base = default_config(
        model.system,
        # the step bound is orientation-independent; theta=0 is representative
        _field(model, 0.0, 0.0),
        geometry,
        model.rates,
        motion,
        t_max_us=spec.t_max_us,
    )
    dt = spec.dt_us if spec.dt_us is not None else base.dt_us
    return IntegratorConfig(dt_us=min(dt, base.dt_us), t_max_us=base.t_max_us)


def _field(model: ModelConfig, theta, phi):
    return FieldSpec(model.b0_uT, theta, phi)


def cell_metrics(model: ModelConfig, spec: SweepSpec, nu_d_MHz: float, j0_over_2pi_MHz: float):
    """Full per-orientation metrology table for one sweep cell.

    ``nu_d_MHz = 0`` means no driving (static reference).
    """
    geometry = _apply_toggles(model.geometry, spec, j0_over_2pi_MHz)
    motion = HarmonicMotion(nu_d_MHz, spec.delta_d_A) if nu_d_MHz > 0 else StaticMotion()
    config = _integrator(model, geometry, motion, spec)
    return orientation_report(
        model.system,
        geometry,
        model.rates,
        motion,
        spec.rfr_gamma,
        model.b0_uT,
        spec.orientation_grid(),
        dtheta=spec.dtheta,
        fd_check=spec.fd_check,
        config=config,
    )


def reference_anisotropy(model: ModelConfig, spec: SweepSpec) -> float:
    """Undriven, exchange-free reference contrast for the filter modes."""
    report = cell_metrics(model, spec, 0.0, 0.0)
    return report.gamma_anisotropy


def reduce_to_row(report, nu_d_MHz, j0_over_2pi_MHz, gamma_ref=None, spec=None) -> str:
    """Collapse an orientation report into one formatted CSV row."""
    rows = report.orientations
    defined = [o for o in rows if o.ratio is not None]
    flags = []
    if defined:
        best = max(defined, key=lambda o: o.ratio)
        ratio = best.ratio
        ratio_mean = float(np.mean([o.ratio for o in defined]))
    else:
        best = rows[0]
        ratio = None
        ratio_mean = None
        flags.append(FLAG_RATIO_UNDEFINED)
    flags.extend(best.flags)
    if any("conservation" in o.flags for o in rows) and "conservation" not in flags:
        flags.append("conservation")
    if gamma_ref is not None and spec is not None and spec.filter_mode != "none":
        threshold = gamma_ref if spec.filter_mode == "maintained" else spec.filter_fraction * gamma_ref
        if report.gamma_anisotropy < threshold:
            flags.append(FLAG_FILTERED)
    flags = list(dict.fromkeys(flags))
    fields = [
        fmt(nu_d_MHz),
        fmt(j0_over_2pi_MHz),
        fmt(best.theta),
        fmt(best.phi),
        fmt(best.phi_s),
        fmt(report.gamma_anisotropy),
        fmt(best.cfi),
        fmt(best.qfi),
        fmt(ratio),
        fmt(ratio_mean),
        ";".join(flags),
    ]
    return ",".join(fields)


def _run_cell(config_path: str, spec: SweepSpec, i: int, j: int, gamma_ref: float):
    model = load_config(config_path)
    nu = float(spec.nu_values()[i])
    j0 = float(spec.j_values()[j])
    report = cell_metrics(model, spec, nu, j0)
    return i, j, reduce_to_row(report, nu, j0, gamma_ref, spec)


class SweepRunner:
    """Drives the cell tasks, the checkpoint file, and the final outputs."""

    def __init__(self, config_path, spec: SweepSpec, out_path, checkpoint_path=None, workers=1):
        self.config_path = str(config_path)
        self.spec = spec
        self.out_path = Path(out_path)
        self.checkpoint_path = (
            Path(checkpoint_path) if checkpoint_path else self.out_path.with_suffix(".ckpt")
        )
        self.workers = max(1, int(workers))
        self.model = load_config(config_path)

    # -- checkpoint handling ------------------------------------------------

    def _checkpoint_header(self) -> dict:
        return {
            "kind": "rpmag-sweep-checkpoint",
            "config_hash": self.model.config_hash,
            "spec_hash": self.spec.spec_hash(),
        }

    def load_checkpoint(self) -> dict:
        done = {}
        if not self.checkpoint_path.exists():
            return done
        lines = self.checkpoint_path.read_text().splitlines()
        if not lines:
            return done
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise ConfigError(f"corrupt checkpoint {self.checkpoint_path}: {exc}") from exc
        if header != self._checkpoint_header():
            raise ConfigError(
                f"checkpoint {self.checkpoint_path} belongs to a different config or sweep spec"
            )
        for line in lines[1:]:
            if not line.strip():
                continue
            entry = json.loads(line)
            done[tuple(entry["cell"])] = entry["row"]
        return done

    # -- execution ------------------------------------------------------------

    def run(self) -> Path:
        spec = self.spec
        nu_vals, j_vals = spec.nu_values(), spec.j_values()
        cells = [(i, j) for i in range(len(nu_vals)) for j in range(len(j_vals))]
        done = self.load_checkpoint()
        pending = [c for c in cells if c not in done]

        gamma_ref = None
        if spec.filter_mode != "none":
            gamma_ref = reference_anisotropy(self.model, spec)

        new_file = not self.checkpoint_path.exists() or not done
        with open(self.checkpoint_path, "a" if not new_file else "w") as ck:
            if new_file:
                ck.write(json.dumps(self._checkpoint_header()) + "\n")
                ck.flush()
            try:
                if self.workers == 1:
                    for i, j in pending:
                        _, _, row = _run_cell(self.config_path, spec, i, j, gamma_ref)
                        done[(i, j)] = row
                        ck.write(json.dumps({"cell": [i, j], "row": row}) + "\n")
                        ck.flush()
                else:
                    with ProcessPoolExecutor(max_workers=self.workers) as pool:
                        futures = {
                            pool.submit(_run_cell, self.config_path, spec, i, j, gamma_ref): (i, j)
                            for i, j in pending
                        }
                        for fut in as_completed(futures):
                            i, j, row = fut.result()
                            done[(i, j)] = row
                            ck.write(json.dumps({"cell": [i, j], "row": row}) + "\n")
                            ck.flush()
            except Exception as exc:
                self._write_output(done, cells, partial=True)
                raise RpmagError(f"sweep interrupted: {exc}") from exc

        self._write_output(done, cells, partial=False)
        self.checkpoint_path.unlink(missing_ok=True)
        return self.out_path

    def _write_output(self, done: dict, cells: list, partial: bool):
        rows = [done[c] for c in cells if c in done]
        text = ",".join(COLUMNS) + "\n" + "".join(r + "\n" for r in rows)
        self.out_path.write_text(text)
        sidecar = {
            "kind": "rpmag-sweep",
            "partial": partial,
            "code_version": __version__,
            "config_path": self.model.source,
            "config_hash": self.model.config_hash,
            "spec": asdict(self.spec),
            "columns": list(COLUMNS),
            "rows": len(rows),
        }
        sidecar_path = self.out_path.with_suffix(self.out_path.suffix + ".meta.json")
        sidecar_path.write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n")


def default_workers() -> int:
    env = os.environ.get("RPMAG_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)
