"""Spin operators, tensor-product embeddings, and electron-pair projectors.

Operators are dense complex numpy arrays. The tensor-factor order is fixed
globally: (electron 1, electron 2, nuclei of radical 1..., nuclei of
radical 2...). A :class:`HilbertLayout` records the factor multiplicities
and is passed wherever an operator needs to know its embedding.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import prod

import numpy as np

from .constants import TOL
from .errors import ConfigError, UnsupportedSystemError

AXES = ("x", "y", "z")


def spin_operators(multiplicity: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (Sx, Sy, Sz) for a single spin with the given multiplicity.

    Standard ladder-operator construction for spin s = (multiplicity-1)/2 in
    the basis |s, m> with m descending from +s to -s.
    """
    if not isinstance(multiplicity, (int, np.integer)) or multiplicity < 2:
        raise ConfigError(f"spin multiplicity must be an integer >= 2, got {multiplicity!r}")
    s = (multiplicity - 1) / 2.0
    m = np.arange(s, -s - 1, -1.0)
    sz = np.diag(m).astype(complex)
    sp = np.zeros((multiplicity, multiplicity), dtype=complex)
    for i in range(multiplicity - 1):
        sp[i, i + 1] = np.sqrt(s * (s + 1) - m[i + 1] * (m[i + 1] + 1))
    sm = sp.conj().T
    sx = (sp + sm) / 2.0
    sy = (sp - sm) / 2.0j
    return sx, sy, sz


def embed(op: np.ndarray, index: int, dims: tuple[int, ...]) -> np.ndarray:
    """Embed a single-factor operator into the full product space.

    Places ``op`` at factor ``index`` and the identity everywhere else, in
    the layout order given by ``dims``.
    """
    if not 0 <= index < len(dims):
        raise IndexError(f"factor index {index} out of range for {len(dims)} factors")
    if op.shape != (dims[index], dims[index]):
        raise ValueError(
            f"operator shape {op.shape} does not match factor multiplicity {dims[index]}"
        )
    before = prod(dims[:index])
    after = prod(dims[index + 1 :])
    out = np.kron(np.kron(np.eye(before), op), np.eye(after))
    return np.ascontiguousarray(out.astype(complex))


@dataclass(frozen=True)
class HilbertLayout:
    """Factor multiplicities of the product space, electrons first.

    ``dims[0]`` and ``dims[1]`` are the two electrons; the remaining entries
    are nuclear factors (radical 1's nuclei followed by radical 2's).
    """

    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.dims) < 2:
            raise UnsupportedSystemError("layout needs two electron factors")
        if any(d < 2 for d in self.dims):
            raise ConfigError(f"all factor multiplicities must be >= 2: {self.dims}")

    @property
    def dim(self) -> int:
        return prod(self.dims)

    @property
    def nuclear_dim(self) -> int:
        """Dimension of the nuclear subspace (1 when there are no nuclei)."""
        return prod(self.dims[2:])

    def electron_operators(self, electron: int) -> np.ndarray:
        """Embedded (Sx, Sy, Sz) of one electron, stacked as shape (3, d, d).

        Cached; treat the returned array as read-only.
        """
        if electron not in (0, 1):
            raise IndexError("electron index must be 0 or 1")
        return _embedded_triple(self, electron)

    def nucleus_operators(self, factor_index: int) -> np.ndarray:
        """Embedded (Ix, Iy, Iz) of the nuclear factor at ``factor_index``.

        Cached; treat the returned array as read-only.
        """
        if factor_index < 2:
            raise IndexError("nuclear factors start at index 2")
        return _embedded_triple(self, factor_index)


@lru_cache(maxsize=64)
def _embedded_triple(layout: "HilbertLayout", factor_index: int) -> np.ndarray:
    ops = spin_operators(layout.dims[factor_index])
    return np.stack([embed(op, factor_index, layout.dims) for op in ops])


def require_hermitian(a: np.ndarray, tol: float = TOL.hermitian, what: str = "operator"):
    """Raise if ``a`` deviates from Hermiticity by more than ``tol``."""
    dev = np.abs(a - a.conj().T).max()
    if dev > tol:
        raise ValueError(f"{what} is not Hermitian: max |A - A^dag| = {dev:.3e}")


@lru_cache(maxsize=64)
def electron_pair_product(layout: HilbertLayout) -> np.ndarray:
    """S1 . S2 summed over x, y, z in the full space (cached, read-only)."""
    s1 = layout.electron_operators(0)
    s2 = layout.electron_operators(1)
    return np.einsum("kab,kbc->ac", s1, s2)


def singlet_projector(layout: HilbertLayout) -> np.ndarray:
    """Projector onto the electronic singlet, identity on all nuclei.

    P_S = I/4 - S1 . S2 for two spin-1/2 electrons.
    """
    if layout.dims[0] != 2 or layout.dims[1] != 2:
        raise UnsupportedSystemError(
            f"singlet projector requires two spin-1/2 electrons, got dims {layout.dims[:2]}"
        )
    d = layout.dim
    return 0.25 * np.eye(d, dtype=complex) - electron_pair_product(layout)


def triplet_projector(layout: HilbertLayout) -> np.ndarray:
    """Complement of the singlet projector."""
    return np.eye(layout.dim, dtype=complex) - singlet_projector(layout)
