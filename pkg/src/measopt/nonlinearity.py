"""Monotone absorption nonlinearities g with g(0) = 0.

Four kinds are supported: signed power |t|^(q-1) t with q >= 1, linear
lambda*t with lambda >= 0, monotone piecewise-linear tables, and
user-supplied callables.  Every kind exposes pointwise evaluation, a
one-sided (right) derivative, a primitive with G(0) = 0 for energy
line searches, a derivative bound over an interval, and the reflection
t -> -g(-t) used by max-side truncation.
"""
from __future__ import annotations

import math

import numpy as np


class Nonlinearity:
    def __init__(self, kind: str, fns: dict, label: str = ""):
        self.kind = kind
        self._fns = fns
        self.label = label or kind

    def __repr__(self):
        return f"Nonlinearity({self.label})"

    def __call__(self, t):
        return self._fns["g"](np.asarray(t, dtype=np.float64))

    def derivative(self, t):
        """Right derivative of g (slope of the right segment at kinks)."""
        return self._fns["dg"](np.asarray(t, dtype=np.float64))

    def primitive(self, t):
        """G(t) = integral of g from 0 to t."""
        return self._fns["G"](np.asarray(t, dtype=np.float64))

    def max_derivative(self, lo: float, hi: float) -> float:
        """Upper bound for g' on [lo, hi]; used by the monotone iteration."""
        lam = float(self._fns["max_dg"](min(lo, hi), max(lo, hi)))
        if not math.isfinite(lam) or lam > 1e14:
            raise ValueError("invalid bracket: derivative bound unavailable on the bracket")
        return lam

    def reflected(self) -> "Nonlinearity":
        """The nonlinearity t -> -g(-t); equals g for odd kinds."""
        return self._fns["reflect"]()

    # ------------------------------------------------------------------
    @classmethod
    def power(cls, q: float) -> "Nonlinearity":
        """g(t) = |t|^(q-1) t, q >= 1 (odd, so self-reflected)."""
        q = float(q)
        if not q >= 1.0:
            raise ValueError(f"invalid nonlinearity: power exponent must be >= 1, got {q}")

        def g(t):
            return np.sign(t) * np.abs(t) ** q

        def dg(t):
            return q * np.abs(t) ** (q - 1.0)

        def G(t):
            return np.abs(t) ** (q + 1.0) / (q + 1.0)

        def max_dg(lo, hi):
            return q * max(abs(lo), abs(hi)) ** (q - 1.0) if q > 1.0 else q

        obj = cls("power", {"g": g, "dg": dg, "G": G, "max_dg": max_dg,
                            "reflect": lambda: obj},
                  label=f"power(q={q:g})")
        obj.exponent = q
        return obj

    @classmethod
    def linear(cls, lam: float) -> "Nonlinearity":
        """g(t) = lam * t with lam >= 0; lam = 0 turns absorption off."""
        lam = float(lam)
        if lam < 0.0:
            raise ValueError(f"invalid nonlinearity: linear slope must be >= 0, got {lam}")
        obj = cls("linear", {"g": lambda t: lam * t,
                             "dg": lambda t: np.full_like(t, lam),
                             "G": lambda t: 0.5 * lam * t * t,
                             "max_dg": lambda lo, hi: lam,
                             "reflect": lambda: obj},
                  label=f"linear(lam={lam:g})")
        obj.slope = lam
        return obj

    @classmethod
    def zero(cls) -> "Nonlinearity":
        return cls.linear(0.0)

    @classmethod
    def table(cls, ts, gs) -> "Nonlinearity":
        """Piecewise-linear monotone interpolant through (ts, gs).

        Breakpoints must be strictly increasing, values nondecreasing,
        the range must bracket 0, and the interpolated g(0) must vanish.
        Outside the table the end segments extend linearly.
        """
        ts = np.asarray(ts, dtype=np.float64)
        gs = np.asarray(gs, dtype=np.float64)
        if ts.ndim != 1 or ts.shape != gs.shape or ts.size < 2:
            raise ValueError("invalid nonlinearity: table needs matching 1-d arrays, length >= 2")
        if np.any(np.diff(ts) <= 0.0):
            raise ValueError("invalid nonlinearity: table breakpoints must be strictly increasing")
        if np.any(np.diff(gs) < 0.0):
            raise ValueError("invalid nonlinearity: table values must be nondecreasing")
        if not (ts[0] <= 0.0 <= ts[-1]):
            raise ValueError("invalid nonlinearity: table range must contain 0")
        slopes = np.diff(gs) / np.diff(ts)

        def g(t):
            t = np.atleast_1d(t)
            out = np.interp(t, ts, gs)
            below = t < ts[0]
            above = t > ts[-1]
            out[below] = gs[0] + slopes[0] * (t[below] - ts[0])
            out[above] = gs[-1] + slopes[-1] * (t[above] - ts[-1])
            return out if out.size > 1 else out.reshape(())

        g0 = float(g(0.0))
        if abs(g0) > 1e-12:
            raise ValueError(f"invalid nonlinearity: table gives g(0) = {g0:g}, expected 0")

        def dg(t):
            t = np.atleast_1d(t)
            seg = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, slopes.size - 1)
            out = slopes[seg]
            return out if out.size > 1 else out.reshape(())

        # exact piecewise-quadratic primitive, accumulated at breakpoints
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (gs[1:] + gs[:-1]) * np.diff(ts))))
        i0 = int(np.searchsorted(ts, 0.0, side="right") - 1)
        i0 = min(max(i0, 0), slopes.size - 1)
        G0 = cum[i0] + gs[i0] * (0.0 - ts[i0]) + 0.5 * slopes[i0] * (0.0 - ts[i0]) ** 2

        def G(t):
            t = np.atleast_1d(t)
            seg = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, slopes.size - 1)
            dt = t - ts[seg]
            out = cum[seg] + gs[seg] * dt + 0.5 * slopes[seg] * dt * dt - G0
            return out if out.size > 1 else out.reshape(())

        def max_dg(lo, hi):
            a = int(np.clip(np.searchsorted(ts, lo, side="right") - 1, 0, slopes.size - 1))
            b = int(np.clip(np.searchsorted(ts, hi, side="right") - 1, 0, slopes.size - 1))
            return float(slopes[a:b + 1].max())

        def reflect():
            return cls.table(-ts[::-1], -gs[::-1])

        return cls("table", {"g": g, "dg": dg, "G": G, "max_dg": max_dg,
                             "reflect": reflect},
                   label=f"table({ts.size} pts)")

    @classmethod
    def from_callable(cls, fn, deriv=None, primitive=None, label="callable") -> "Nonlinearity":
        """Wrap a user-supplied monotone g with g(0) = 0.

        Missing derivative falls back to central differences; a missing
        primitive to 32-point Gauss-Legendre quadrature on [0, t].
        Monotonicity is only spot-checked during solves.
        """
        def g(t):
            return np.asarray(fn(t), dtype=np.float64)

        g0 = float(np.asarray(fn(np.asarray(0.0))))
        if abs(g0) > 1e-12:
            raise ValueError(f"invalid nonlinearity: g(0) = {g0:g}, expected 0")

        if deriv is not None:
            def dg(t):
                return np.asarray(deriv(t), dtype=np.float64)
        else:
            def dg(t):
                step = 1e-6 * np.maximum(1.0, np.abs(t))
                return (g(t + step) - g(t - step)) / (2.0 * step)

        if primitive is not None:
            def G(t):
                return np.asarray(primitive(t), dtype=np.float64)
        else:
            nodes, weights = np.polynomial.legendre.leggauss(32)

            def G(t):
                t = np.atleast_1d(np.asarray(t, dtype=np.float64))
                pts = 0.5 * t[..., None] * (nodes + 1.0)
                out = 0.5 * t * (g(pts) @ weights)
                return out if out.size > 1 else out.reshape(())

        def max_dg(lo, hi):
            samples = np.linspace(lo, hi, 4097)
            return float(np.max(dg(samples)))

        def reflect():
            refl_deriv = None if deriv is None else (lambda t: deriv(-np.asarray(t)))
            refl_prim = None if primitive is None else (lambda t: primitive(-np.asarray(t)))
            return cls.from_callable(lambda t: -fn(-np.asarray(t)),
                                     deriv=refl_deriv, primitive=refl_prim,
                                     label=f"reflected {label}")

        return cls("callable", {"g": g, "dg": dg, "G": G, "max_dg": max_dg,
                                "reflect": reflect}, label=label)


def nonlinearity_from_config(cfg: dict) -> Nonlinearity:
    """Build a Nonlinearity from its JSON description {"kind": ..., ...}."""
    kind = cfg.get("kind")
    if kind == "power":
        return Nonlinearity.power(cfg.get("q", 2.0))
    if kind == "linear":
        return Nonlinearity.linear(cfg.get("lam", cfg.get("lambda", 0.0)))
    if kind == "zero":
        return Nonlinearity.zero()
    if kind == "table":
        return Nonlinearity.table(cfg["t"], cfg["g"])
    raise ValueError(f"invalid config: unknown nonlinearity kind {kind!r}")
