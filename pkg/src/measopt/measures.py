"""Finite signed measures on the box: atoms plus an optional density.

A DiscreteMeasure combines finitely many point masses at continuous
locations inside the open box with an optional L1 density field on a
grid.  Atom positions are stored continuously so the same measure can
be rasterized on grids of any resolution.  Atoms and density are
treated as mutually singular when computing the total variation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Grid, ScalarField, _lp, save_field, load_field


def _validate_location(x, dim: int) -> tuple:
    loc = tuple(float(c) for c in x)
    if len(loc) != dim:
        raise ValueError(f"invalid measure: atom location {loc} is not {dim}-dimensional")
    if not all(0.0 < c < 1.0 for c in loc):
        raise ValueError(f"invalid measure: atom location {loc} outside the open unit box")
    return loc


@dataclass(frozen=True)
class DiscreteMeasure:
    dim: int
    atoms: tuple = ()
    density: ScalarField | None = None

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"invalid measure: dim must be in {{1,2,3}}, got {self.dim!r}")
        merged: dict = {}
        for loc, w in self.atoms:
            loc = _validate_location(loc, self.dim)
            w = float(w)
            if not math.isfinite(w):
                raise ValueError("invalid measure: atom weight must be finite")
            merged[loc] = merged.get(loc, 0.0) + w
        atoms = tuple((loc, w) for loc, w in merged.items() if w != 0.0)
        object.__setattr__(self, "atoms", atoms)
        if self.density is not None and self.density.grid.dim != self.dim:
            raise ValueError("invalid measure: density grid dimension mismatch")

    @classmethod
    def zero(cls, dim: int) -> "DiscreteMeasure":
        return cls(dim)

    @classmethod
    def point(cls, x, w: float) -> "DiscreteMeasure":
        return cls(len(tuple(x)), atoms=((tuple(x), w),))

    @classmethod
    def from_atoms(cls, dim: int, atoms) -> "DiscreteMeasure":
        return cls(dim, atoms=tuple((tuple(x), w) for x, w in atoms))

    @classmethod
    def from_density(cls, field: ScalarField) -> "DiscreteMeasure":
        return cls(field.grid.dim, density=field)

    def total_mass(self) -> float:
        mass = sum(w for _, w in self.atoms)
        if self.density is not None:
            mass += float(self.density.values.sum()) * self.density.grid.cell_volume
        return mass


def tv_norm(m: DiscreteMeasure) -> float:
    """Total variation: sum of |atom weights| plus the density L1 norm."""
    total = sum(abs(w) for _, w in m.atoms)
    if m.density is not None:
        total += _lp(m.density.values, 1.0, m.density.grid)
    return total


def jordan_decompose(m: DiscreteMeasure):
    """Split into nonnegative (pos, neg) parts with m = pos - neg.

    Atom weights split by sign; the density splits pointwise.  The split
    is exactly norm-additive: tv(m) = tv(pos) + tv(neg).
    """
    pos_atoms = tuple((loc, w) for loc, w in m.atoms if w > 0.0)
    neg_atoms = tuple((loc, -w) for loc, w in m.atoms if w < 0.0)
    pos_density = neg_density = None
    if m.density is not None:
        v = m.density.values
        pos_density = ScalarField(m.density.grid, np.maximum(v, 0.0))
        neg_density = ScalarField(m.density.grid, np.maximum(-v, 0.0))
    pos = DiscreteMeasure(m.dim, atoms=pos_atoms, density=pos_density)
    neg = DiscreteMeasure(m.dim, atoms=neg_atoms, density=neg_density)
    return pos, neg


def scale(m: DiscreteMeasure, c: float) -> DiscreteMeasure:
    density = None
    if m.density is not None:
        density = ScalarField(m.density.grid, c * m.density.values)
    return DiscreteMeasure(m.dim, atoms=tuple((loc, c * w) for loc, w in m.atoms),
                           density=density)


def negate(m: DiscreteMeasure) -> DiscreteMeasure:
    return scale(m, -1.0)


def rasterize(m: DiscreteMeasure, grid: Grid) -> ScalarField:
    """Project the measure to a density field on ``grid``.

    Each atom of weight w lands on its nearest node with value w/h^dim;
    a density is carried over verbatim (its grid must match).  Exactly
    mass preserving.
    """
    if m.dim != grid.dim:
        raise ValueError("invalid measure: dimension does not match grid")
    vals = np.zeros(grid.total_interior)
    if m.density is not None:
        if m.density.grid != grid:
            raise ValueError("invalid measure: density lives on a different grid")
        vals += m.density.values
    w_scale = 1.0 / grid.cell_volume
    for loc, w in m.atoms:
        _validate_location(loc, grid.dim)
        vals[grid.flat_index(grid.nearest_index(loc))] += w * w_scale
    return ScalarField(grid, vals)


def weak_star_pairing(m: DiscreteMeasure, phi: ScalarField) -> float:
    """Pairing <m, phi>: atom weights sample phi at nearest nodes, the
    density integrates against phi with h^dim weights."""
    total = 0.0
    grid = phi.grid
    if m.dim != grid.dim:
        raise ValueError("invalid measure: dimension does not match test field")
    for loc, w in m.atoms:
        total += w * float(phi.values[grid.flat_index(grid.nearest_index(loc))])
    if m.density is not None:
        if m.density.grid != grid:
            raise ValueError("invalid measure: density lives on a different grid")
        total += float(m.density.values @ phi.values) * grid.cell_volume
    return total


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------

def bump_kernel(r2_over_rad2: np.ndarray) -> np.ndarray:
    """Smooth compactly supported bump exp(-1/(1-s)) on s = |x/r|^2 < 1."""
    out = np.zeros_like(r2_over_rad2)
    inside = r2_over_rad2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2_over_rad2[inside]))
    return out


def _mollify_nonneg(m: DiscreteMeasure, radius: float, grid: Grid) -> np.ndarray:
    """Mollified density of a nonnegative measure, exact mass per part."""
    h = grid.h
    n = grid.n
    vals = np.zeros(grid.shape)
    ax = grid.axis_coords()
    for loc, w in m.atoms:
        windows = []
        for k in range(grid.dim):
            lo = max(int(math.ceil((loc[k] - radius) / h)), 1)
            hi = min(int(math.floor((loc[k] + radius) / h)), n)
            windows.append((lo, hi))
        if any(lo > hi for lo, hi in windows):
            continue
        d2 = np.zeros([hi - lo + 1 for lo, hi in windows])
        for k, (lo, hi) in enumerate(windows):
            shape = [1] * grid.dim
            shape[k] = hi - lo + 1
            d2 = d2 + ((ax[lo - 1:hi] - loc[k]) ** 2).reshape(shape)
        kern = bump_kernel(d2 / radius ** 2)
        s = kern.sum() * grid.cell_volume
        if s <= 0.0:
            raise ValueError("under-resolved kernel: no node mass under the bump")
        sl = tuple(slice(lo - 1, hi) for lo, hi in windows)
        vals[sl] += (w / s) * kern
    if m.density is not None:
        dmass = float(m.density.values.sum()) * grid.cell_volume
        if dmass > 0.0:
            reach = int(math.floor(radius / h))
            offs = np.arange(-reach, reach + 1)
            mesh = np.meshgrid(*([offs] * grid.dim), indexing="ij")
            d2 = sum((mm.astype(np.float64) * h) ** 2 for mm in mesh)
            w_k = bump_kernel(d2 / radius ** 2)
            w_k /= w_k.sum()
            # mass leaving the box folds back across the boundary, so
            # constants and the total mass survive the convolution
            dens = np.pad(m.density.reshaped(), reach, mode="symmetric")
            conv = np.zeros(grid.shape)
            for off, wk in zip(np.stack([mm.reshape(-1) for mm in mesh], axis=1),
                               w_k.reshape(-1)):
                if wk == 0.0:
                    continue
                sl = tuple(slice(reach - int(o), reach - int(o) + n) for o in off)
                conv += wk * dens[sl]
            got = conv.sum() * grid.cell_volume
            if got <= 0.0:
                raise ValueError("under-resolved kernel: density mass vanished")
            vals += (dmass / got) * conv
    return vals.reshape(-1)


def mollify(m: DiscreteMeasure, radius: float, grid: Grid) -> ScalarField:
    """Convolve the measure with a smooth bump of the given radius.

    The kernel is mass-normalized numerically, per nonnegative part, so
    the discrete integral of the result equals m(box) and the L1 norm
    stays within the total variation of the Jordan parts.

    Parameters
    ----------
    radius : bump support radius; must be at least 2h to be resolved.
    """
    if m.dim != grid.dim:
        raise ValueError("invalid measure: dimension does not match grid")
    if radius < 2.0 * grid.h:
        raise ValueError(
            f"under-resolved kernel: radius {radius} below 2h = {2.0 * grid.h}")
    pos, neg = jordan_decompose(m)
    vals = np.zeros(grid.total_interior)
    if tv_norm(pos) > 0.0:
        vals += _mollify_nonneg(pos, radius, grid)
    if tv_norm(neg) > 0.0:
        vals -= _mollify_nonneg(neg, radius, grid)
    return ScalarField(grid, vals)


@dataclass(frozen=True)
class MollifierSequence:
    """Unit-mass smooth bumps shrinking onto a point.

    ``radii`` must be positive and strictly decreasing; level k yields
    the bump of radius radii[k] centered at ``center``, numerically
    normalized to integrate to 1 on whichever grid it is sampled.
    """

    center: tuple
    radii: tuple

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        if not all(0.0 < c < 1.0 for c in center):
            raise ValueError("invalid measure: mollifier center outside the open box")
        radii = tuple(float(r) for r in self.radii)
        if not radii or any(r <= 0.0 for r in radii):
            raise ValueError("invalid config: radii must be positive")
        if any(b >= a for a, b in zip(radii, radii[1:])):
            raise ValueError("invalid config: radii must be strictly decreasing")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radii", radii)

    def __len__(self):
        return len(self.radii)

    def density(self, k: int, grid: Grid) -> ScalarField:
        delta = DiscreteMeasure.point(self.center, 1.0)
        return mollify(delta, self.radii[k], grid)

    def measure(self, k: int, grid: Grid) -> DiscreteMeasure:
        return DiscreteMeasure.from_density(self.density(k, grid))


# ---------------------------------------------------------------------------
# Newtonian potential (3-D only)
# ---------------------------------------------------------------------------

def newtonian_potential(m: DiscreteMeasure, x) -> float:
    """Evaluate (1/(4 pi)) * integral d|m|(y) / |x - y| against the measure.

    Only defined in dimension 3.  Atom terms use exact distances; the
    density contributes a midpoint-quadrature sum.  Evaluation at an
    atom location (or at a node carrying density) is singular.
    """
    if m.dim != 3:
        raise ValueError(f"unsupported dimension: Newtonian potential needs dim=3, got {m.dim}")
    pt = np.asarray(tuple(float(c) for c in x), dtype=np.float64)
    if pt.shape != (3,):
        raise ValueError("unsupported dimension: evaluation point must be 3-dimensional")
    coef = 1.0 / (4.0 * math.pi)
    total = 0.0
    for loc, w in m.atoms:
        d = float(np.linalg.norm(pt - np.asarray(loc)))
        if d == 0.0:
            raise ValueError(f"singular evaluation: point {tuple(pt)} coincides with an atom")
        total += w / d
    if m.density is not None:
        coords = m.density.grid.node_coords()
        d = np.linalg.norm(coords - pt, axis=1)
        nz = m.density.values != 0.0
        if np.any(d[nz] == 0.0):
            raise ValueError("singular evaluation: point lies on a density-carrying node")
        vol = m.density.grid.cell_volume
        total += float((m.density.values[nz] / d[nz]).sum()) * vol
    return coef * total


# ---------------------------------------------------------------------------
# serialization and display
# ---------------------------------------------------------------------------

def save_measure(m: DiscreteMeasure, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema": 1, "dim": m.dim,
           "atoms": [{"x": list(loc), "w": w} for loc, w in m.atoms]}
    if m.density is not None:
        density_file = path.stem + "_density.f64"
        save_field(m.density, path.parent / density_file)
        doc["density_file"] = density_file
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_measure(path) -> DiscreteMeasure:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        atoms = tuple((tuple(a["x"]), float(a["w"])) for a in doc.get("atoms", ()))
        dim = int(doc["dim"]) if "dim" in doc else len(atoms[0][0])
    except (OSError, json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise ValueError(f"invalid measure file {path}: {exc}") from exc
    density = None
    if doc.get("density_file"):
        density = load_field(path.parent / doc["density_file"])
    return DiscreteMeasure(dim, atoms=atoms, density=density)


def describe(m: DiscreteMeasure) -> str:
    """One-paragraph human-readable summary of a measure."""
    parts = [f"measure on ({m.dim})-d box: {len(m.atoms)} atom(s)"]
    for loc, w in m.atoms[:8]:
        parts.append(f"  {w:+.6g} at ({', '.join(f'{c:.4g}' for c in loc)})")
    if len(m.atoms) > 8:
        parts.append(f"  ... {len(m.atoms) - 8} more")
    if m.density is not None:
        g = m.density.grid
        parts.append(f"  density on dim={g.dim} n={g.n} grid, "
                     f"L1 mass {float(np.abs(m.density.values).sum()) * g.cell_volume:.6g}")
    parts.append(f"  tv norm {tv_norm(m):.6g}, signed mass {m.total_mass():.6g}")
    return "\n".join(parts)
