"""Reluctivity laws and the ON/OFF design-to-coefficient map."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .exceptions import MaterialError
from .mesh import DESIGN, IRON, Mesh

NU0 = 1e7 / (4 * math.pi)
NU_R = 1.0 / 5100.0

LINEAR = "linear"
NONLINEAR = "nonlinear"
MODES = (LINEAR, NONLINEAR)


@dataclass(frozen=True, eq=False)
class BHModel:
    """Reluctivity curve nu(s) of the ferromagnetic material, s = |B| = |grad u|.

    The analytic curve is ``nu0 + (nu1 - nu0) / (1 + (s/s0)**p)``, rising
    from ``nu1`` at ``s=0`` to ``nu0`` at saturation.  A tabulated curve is
    built with `build_bh_table`.
    """

    nu0: float = NU0
    nu_r: float = NU_R
    s0: float = 1.5
    exponent: float = 4.0
    table: Optional[CubicHermiteSpline] = field(default=None, repr=False)
    table_range: Optional[tuple] = None

    def __post_init__(self):
        if not (self.nu0 > 0 and 0 < self.nu_r <= 1):
            raise MaterialError("need nu0 > 0 and 0 < nu_r <= 1")
        if self.table is None and not (self.s0 > 0 and self.exponent >= 2):
            raise MaterialError("analytic curve needs s0 > 0 and exponent >= 2")

    @property
    def nu1(self) -> float:
        return self.nu0 * self.nu_r

    @property
    def kind(self) -> str:
        return "table" if self.table is not None else "analytic"

    # vectorized curve evaluation -------------------------------------------
    def nu(self, s):
        s = np.asarray(s, dtype=float)
        if self.table is None:
            x = (s / self.s0) ** self.exponent
            # written so that nu(0) == nu1 and nu(inf) == nu0 exactly
            return self.nu1 + (self.nu0 - self.nu1) * (1.0 - 1.0 / (1.0 + x))
        lo, hi = self.table_range
        v = self.table(np.clip(s, lo, hi))
        return np.clip(v, self.nu1, self.nu0)

    def dnu(self, s):
        """Derivative of the curve with respect to s."""
        s = np.asarray(s, dtype=float)
        if self.table is None:
            p, t = self.exponent, s / self.s0
            x = t ** p
            return (self.nu0 - self.nu1) * p * t ** (p - 1) / self.s0 / (1.0 + x) ** 2
        lo, hi = self.table_range
        d = self.table.derivative()(np.clip(s, lo, hi))
        return np.where((s < lo) | (s > hi), 0.0, np.maximum(d, 0.0))

    def dnu_over_s(self, s):
        """``nu'(s)/s`` with its finite limit at ``s = 0``."""
        s = np.asarray(s, dtype=float)
        if self.table is None:
            p, t = self.exponent, s / self.s0
            x = t ** p
            return (self.nu0 - self.nu1) * p * t ** (p - 2) / self.s0 ** 2 / (1.0 + x) ** 2
        lo, hi = self.table_range
        tiny = 1e-12 * max(hi, 1.0)
        safe = np.where(s > tiny, s, 1.0)
        out = self.dnu(s) / safe
        limit = max(float(self.table.derivative(2)(lo)), 0.0)
        return np.where(s > tiny, out, limit)

    def frozen(self) -> "BHModel":
        """Curve pinned at nu1 (s0 -> infinity); reproduces the linear law."""
        return BHModel(self.nu0, self.nu_r, s0=math.inf, exponent=self.exponent)


def build_bh_table(samples, nu0: float = NU0, nu_r: float = NU_R, rtol: float = 1e-9) -> BHModel:
    """Monotone cubic reluctivity model through measured ``(s, nu)`` samples.

    Samples must be strictly increasing in both columns, start at or above
    ``nu1`` and stay at or below ``nu0``.  End slopes are set to zero so the
    curve is C1, flat at ``s=0`` and constant beyond the last sample.
    """
    a = np.asarray(samples, dtype=float)
    if a.ndim != 2 or a.shape[1] != 2 or len(a) < 2:
        raise MaterialError("need at least two (s, nu) samples")
    s, v = a[:, 0], a[:, 1]
    if not np.all(np.isfinite(a)):
        raise MaterialError("non-finite sample")
    if s[0] < 0 or np.any(np.diff(s) <= 0):
        raise MaterialError("s samples must be nonnegative and strictly increasing")
    if np.any(np.diff(v) <= 0):
        raise MaterialError("nu samples must be strictly increasing")
    nu1 = nu0 * nu_r
    if v[0] < nu1 * (1 - rtol) or v[-1] > nu0 * (1 + rtol) or v[0] <= 0:
        raise MaterialError(f"nu samples must lie in [{nu1:g}, {nu0:g}]")
    d = PchipInterpolator(s, v).derivative()(s)
    d[0] = 0.0
    d[-1] = 0.0
    spline = CubicHermiteSpline(s, v, d)
    return BHModel(nu0=nu0, nu_r=nu_r, table=spline, table_range=(float(s[0]), float(s[-1])))


def load_bh_csv(stream: TextIO, nu0: float = NU0, nu_r: float = NU_R) -> BHModel:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["s", "nu"]:
        raise MaterialError("B-H table must start with header 's,nu'")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        try:
            rows.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            raise MaterialError(f"line {lineno}: malformed row {row!r}") from None
    return build_bh_table(rows, nu0=nu0, nu_r=nu_r)


class DesignState:
    """ON/OFF flag per design element plus the material mode.

    ``flags[i]`` belongs to element ``mesh.design_elements[i]``.
    """

    def __init__(self, mesh: Mesh, flags=None, mode: str = LINEAR):
        if mode not in MODES:
            raise MaterialError(f"mode must be one of {MODES}")
        n = len(mesh.design_elements)
        if flags is None:
            flags = np.ones(n, dtype=bool)
        flags = np.array(flags, dtype=bool)
        if flags.shape != (n,):
            raise MaterialError(f"expected {n} design flags, got {flags.shape}")
        self.mesh = mesh
        self.flags = flags
        self.mode = mode

    def copy(self) -> "DesignState":
        return DesignState(self.mesh, self.flags.copy(), self.mode)

    @property
    def n_on(self) -> int:
        return int(self.flags.sum())

    def on_elements(self) -> np.ndarray:
        return self.mesh.design_elements[self.flags]

    def off_elements(self) -> np.ndarray:
        return self.mesh.design_elements[~self.flags]

    def iron_mask(self) -> np.ndarray:
        """Elements carrying ferromagnetic material in the current design."""
        mask = self.mesh.tags == IRON
        mask[self.mesh.design_elements[self.flags]] = True
        return mask

    def __repr__(self):
        return f"DesignState(mode={self.mode!r}, on={self.n_on}/{len(self.flags)})"


def element_reluctivity(model: BHModel, state: DesignState, s=None, offset=None) -> np.ndarray:
    """Reluctivity of every element for element-wise |grad u| values `s`.

    `offset` is an optional additive shift per element (used by the
    finite-difference sensitivity oracle).
    """
    mesh = state.mesh
    iron = state.iron_mask()
    nu = np.full(mesh.n_elements, model.nu0)
    if state.mode == LINEAR or s is None:
        nu[iron] = model.nu1 if state.mode == LINEAR else model.nu(np.zeros(iron.sum()))
    else:
        nu[iron] = model.nu(np.asarray(s, dtype=float)[iron])
    if offset is not None:
        nu = nu + offset
    return nu


def reluctivity(model: BHModel, state: DesignState, mesh: Mesh, elem: int, s: float) -> float:
    if not (s >= 0 and math.isfinite(s)):
        raise MaterialError("s must be finite and nonnegative")
    tag = mesh.tags[elem]
    if tag == IRON or (tag == DESIGN and state.flags[np.searchsorted(mesh.design_elements, elem)]):
        return model.nu1 if state.mode == LINEAR else float(model.nu(s))
    return model.nu0


def reluctivity_derivative(model: BHModel, s, mode: str = NONLINEAR):
    if mode == LINEAR:
        return np.zeros_like(np.asarray(s, dtype=float))
    return model.dnu(s)
