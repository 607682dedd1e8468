"""YAML model-config loading with schema diagnostics.

Expected layout (all keys optional unless noted)::

    radicals:                # exactly two entries, one per radical
      - nuclei:
          - name: N5
            multiplicity: 3
            tensor_mT: [a_xx, a_xy, ..., a_zz]   # 9 numbers, row-major
      - nuclei: []
    geometry:
      r0_A: 17.2
      axis: [0.0, 0.0, 1.0]
    couplings:
      J0_over_2pi_MHz: 0.0
      beta_per_A: 1.4
      dipolar: true
      exchange: true
    rates:
      kf_per_us: 1.0
      kb0_per_us: 1.0
    relaxation:
      gamma_per_us: 0.0
    field:
      B0_uT: 50.0
"""

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .model import Geometry, Nucleus, Rates, SpinSystem


@dataclass(frozen=True)
class ModelConfig:
    """Everything a simulation needs except field direction and motion."""

    system: SpinSystem
    geometry: Geometry
    rates: Rates
    gamma_per_us: float
    b0_uT: float
    config_hash: str
    source: str


def _expect_mapping(node, where: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(node).__name__}")
    return node


def _get_number(mapping: dict, key: str, default, where: str) -> float:
    value = mapping.get(key, default)
    if value is None:
        raise ConfigError(f"{where}.{key}: missing required value")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: expected a number, got {value!r}") from None


def _parse_nucleus(node, radical: int, index: int) -> Nucleus:
    where = f"radicals[{radical - 1}].nuclei[{index}]"
    node = _expect_mapping(node, where)
    name = str(node.get("name", f"nuc{radical}.{index}"))
    mult = node.get("multiplicity")
    if not isinstance(mult, int) or mult < 2:
        raise ConfigError(f"{where}.multiplicity: expected an integer >= 2, got {mult!r}")
    tensor = node.get("tensor_mT")
    if not isinstance(tensor, (list, tuple)) or len(tensor) != 9:
        raise ConfigError(f"{where}.tensor_mT: expected 9 numbers (row-major 3x3)")
    try:
        t = np.array([float(x) for x in tensor], dtype=float).reshape(3, 3)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.tensor_mT: entries must be numbers") from None
    return Nucleus(name=name, multiplicity=mult, tensor_mT=t, radical=radical)


def load_config(path) -> ModelConfig:
    """Parse and validate a model config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    raw = _expect_mapping(raw, str(path))

    radicals = raw.get("radicals", [{}, {}])
    if not isinstance(radicals, list) or len(radicals) != 2:
        raise ConfigError("radicals: expected a list with exactly two entries")
    nuclei: list[Nucleus] = []
    for ridx, rnode in enumerate(radicals, start=1):
        rnode = _expect_mapping(rnode, f"radicals[{ridx - 1}]")
        entries = rnode.get("nuclei", []) or []
        if not isinstance(entries, list):
            raise ConfigError(f"radicals[{ridx - 1}].nuclei: expected a list")
        for nidx, node in enumerate(entries):
            nuclei.append(_parse_nucleus(node, ridx, nidx))

    geo = _expect_mapping(raw.get("geometry"), "geometry")
    cpl = _expect_mapping(raw.get("couplings"), "couplings")
    axis = geo.get("axis", [0.0, 0.0, 1.0])
    if not isinstance(axis, (list, tuple)) or len(axis) != 3:
        raise ConfigError("geometry.axis: expected 3 numbers")
    geometry = Geometry(
        r0_A=_get_number(geo, "r0_A", 17.2, "geometry"),
        axis=np.array([float(x) for x in axis]),
        j0_rad_us=2.0 * np.pi * _get_number(cpl, "J0_over_2pi_MHz", 0.0, "couplings"),
        beta_per_A=_get_number(cpl, "beta_per_A", 1.4, "couplings"),
        dipolar_enabled=bool(cpl.get("dipolar", True)),
        exchange_enabled=bool(cpl.get("exchange", True)),
    )

    rat = _expect_mapping(raw.get("rates"), "rates")
    rates = Rates(
        kf_per_us=_get_number(rat, "kf_per_us", 1.0, "rates"),
        kb0_per_us=_get_number(rat, "kb0_per_us", 1.0, "rates"),
    )

    rel = _expect_mapping(raw.get("relaxation"), "relaxation")
    gamma = _get_number(rel, "gamma_per_us", 0.0, "relaxation")
    if gamma < 0:
        raise ConfigError("relaxation.gamma_per_us: must be >= 0")

    fld = _expect_mapping(raw.get("field"), "field")
    b0 = _get_number(fld, "B0_uT", 50.0, "field")
    if b0 < 0:
        raise ConfigError("field.B0_uT: must be >= 0")

    digest = hashlib.sha256(text.encode()).hexdigest()[:16]
    return ModelConfig(
        system=SpinSystem(nuclei),
        geometry=geometry,
        rates=rates,
        gamma_per_us=gamma,
        b0_uT=b0,
        config_hash=digest,
        source=str(path),
    )
