"""Double-exponential quadrature against the law of the mixing pair (R, S).

Every mixing variable is integrated in its own coordinate.  Half-line pieces
use the exp-sinh map ``u = lo + dir * c * exp(pi/2 sinh t)`` and bounded
pieces use the tanh-sinh map.  The scale ``c`` is placed at the peak of the
integrand on a coarse log grid, the ``t`` window is trimmed to the region
that carries non-negligible mass, and the step is halved until two
successive estimates agree.  Atoms are summed exactly.  Two mixing variables
are handled with a tensor product of the one-dimensional rules.

The law objects consumed here expose ``logpdf(u)``, ``quad_pieces()`` and
``atoms()``; the composition objects expose ``variables`` and
``transform(*values)``.  See :mod:`gmn.mixing`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .errors import QuadratureError

__all__ = ["NodeSet", "QuadEstimate", "integrate_log", "integrate_linear", "fixed_nodes"]

HALF_PI = 0.5 * math.pi
_T_HALF = 6.5  # exp-sinh window: exp(pi/2 sinh 6.5) ~ 1e226
_T_FINITE = 4.0
_LOG_TINY = math.log(np.finfo(float).tiny)
_LOGX_GRID = np.arange(-30.0, 30.01, 0.5)
_TRIM_DROP = 90.0  # nodes below max - 90 in log space are negligible
_H0 = 0.5
_SHARP = 0.02  # peaks narrower than this fraction of their piece get their own piece
_PEAK_HALF_WIDTH = 12.0  # in units of the peak's standard deviation
MAX_LEVEL_1D = 9
MAX_LEVEL_2D = 6


@dataclass(frozen=True)
class NodeSet:
    """Weighted nodes ``(r_j, s_j, log w_j)`` representing a measure on (R, S)."""

    r: np.ndarray
    s: np.ndarray
    logw: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.logw)

    def __len__(self):
        return self.r.shape[0]

    def integrate(self, values) -> np.ndarray:
        """Sum ``w_j * values_j`` along the node axis."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@dataclass(frozen=True)
class QuadEstimate:
    """Converged integral on the log scale with its relative error estimate."""

    log_value: np.ndarray
    rel_error: float
    level: int
    nodes: NodeSet


class _Axis:
    """Node generator for one mixing variable."""

    def __init__(self, law):
        self.law = law
        atoms = law.atoms()
        self.atomic = atoms is not None
        if self.atomic:
            vals, probs = atoms
            self._atoms = (np.asarray(vals, float), np.log(np.asarray(probs, float)))
            self.pieces = []
        else:
            self.pieces = list(law.quad_pieces())
        self.scales = [1.0] * len(self.pieces)
        self.best_peak = [-np.inf] * len(self.pieces)
        self.windows = [self._default_window(p) for p in self.pieces]

    @staticmethod
    def _default_window(piece):
        t = _T_HALF if piece[0] == "half" else _T_FINITE
        return (-t, t)

    # -- raw coordinates ------------------------------------------------
    def _piece_nodes(self, i, h):
        piece = self.pieces[i]
        lo_t, hi_t = self.windows[i]
        k = np.arange(math.ceil(lo_t / h - 1e-9), math.floor(hi_t / h + 1e-9) + 1)
        t = k * h
        s = HALF_PI * np.sinh(t)
        if piece[0] == "half":
            _, lo, direction = piece
            logx = s + math.log(self.scales[i])
            x = np.exp(logx)
            u = lo + direction * x
            logjac = math.log(h) + np.log(HALF_PI * np.cosh(t)) + logx
        else:
            _, a, b = piece
            m = 0.5 * (b - a)
            u = np.where(s < 0, a + 2.0 * m / (1.0 + np.exp(-2.0 * s)), b - 2.0 * m / (1.0 + np.exp(2.0 * s)))
            abs_s = np.abs(s)
            log_cosh = abs_s + np.log1p(np.exp(-2.0 * abs_s)) - math.log(2.0)
            logjac = math.log(h) + math.log(m) + np.log(HALF_PI * np.cosh(t)) - 2.0 * log_cosh
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            lw = logjac + self.law.logpdf(u)
        return t, u, lw

    def nodes(self, h):
        """Values and law-weighted log weights at step ``h``."""
        if self.atomic:
            return self._atoms
        us, lws = [], []
        for i in range(len(self.pieces)):
            _, u, lw = self._piece_nodes(i, h)
            keep = np.isfinite(lw)
            us.append(u[keep])
            lws.append(lw[keep])
        if not us:
            return np.empty(0), np.empty(0)
        return np.concatenate(us), np.concatenate(lws)

    def scan_points(self, i):
        """Log-spaced probe points on piece ``i`` with log-measure weights."""
        piece = self.pieces[i]
        if piece[0] == "half":
            _, lo, direction = piece
            x = np.exp(_LOGX_GRID)
            u = lo + direction * x
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                lw = self.law.logpdf(u) + _LOGX_GRID
            return _LOGX_GRID, u, lw
        _, a, b = piece
        frac = np.linspace(0.0, 1.0, 41)[1:-1]
        u = a + (b - a) * frac
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            lw = self.law.logpdf(u) + math.log(b - a)
        return None, u, lw

    def probe_sets(self):
        """List of (piece index or None, u, log weight) for the planning scan."""
        if self.atomic:
            return [(None, self._atoms[0], self._atoms[1])]
        return [(i,) + self.scan_points(i)[1:] for i in range(len(self.pieces))]


def _log_mag(values):
    with np.errstate(divide="ignore"):
        return np.log(np.abs(values))


def _reduce_components(x):
    # collapse a trailing component axis by max
    return x if x.ndim == 1 else np.max(x, axis=tuple(range(1, x.ndim)))


class _Plan:
    """Scale placement and window trimming for one spec/kernel pair."""

    def __init__(self, spec, log_mag_fn, linear=False):
        self.spec = spec
        self.axes = [_Axis(law) for law in spec.variables]
        self.log_mag_fn = log_mag_fn
        # in linear arithmetic a node whose weight underflows contributes
        # exactly nothing, even where the kernel itself overflows
        self.linear = linear
        self._place_scales()
        self._trim()

    def _evaluate_grid(self, axis_sets):
        """Log integrand on the tensor grid of per-axis (u, logw) sets."""
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self._evaluate_grid_raw(axis_sets)

    def _evaluate_grid_raw(self, axis_sets):
        if len(axis_sets) == 1:
            u, lw = axis_sets[0]
            r, s = self.spec.transform(u)
            base = lw
        else:
            (u, lwu), (v, lwv) = axis_sets
            uu, vv = np.meshgrid(u, v, indexing="ij")
            r, s = self.spec.transform(uu.ravel(), vv.ravel())
            base = (lwu[:, None] + lwv[None, :]).ravel()
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            lk = _reduce_components(np.asarray(self.log_mag_fn(r, s)))
            out = base + lk
        out = np.where(np.isnan(out), -np.inf, out)
        if self.linear:
            out = np.where(base < _LOG_TINY, -np.inf, out)
        if len(axis_sets) == 2:
            out = out.reshape(len(axis_sets[0][0]), len(axis_sets[1][0]))
        return out

    def _place_scales(self):
        probes = [ax.probe_sets() for ax in self.axes]
        if len(self.axes) == 1:
            ax = self.axes[0]
            splits = {}
            for idx, u, lw in probes[0]:
                if idx is None:
                    continue
                vals = self._evaluate_grid([(u, lw)])
                if np.any(np.isfinite(vals)):
                    best = int(np.argmax(vals))
                    if ax.pieces[idx][0] == "half":
                        ax.scales[idx] = float(np.exp(_LOGX_GRID[best]))
                    split = self._sharp_split(ax.pieces[idx], u, best)
                    if split is not None:
                        splits[idx] = split
            if splits:
                pieces, scales = [], []
                for i, piece in enumerate(ax.pieces):
                    for sub in splits.get(i, [piece]):
                        pieces.append(sub)
                        scales.append(ax.scales[i] if sub is piece else 1.0)
                ax.pieces, ax.scales = pieces, scales
                ax.best_peak = [-np.inf] * len(pieces)
                ax.windows = [ax._default_window(p) for p in pieces]
            return
        for iu, u, lwu in probes[0]:
            for iv, v, lwv in probes[1]:
                vals = self._evaluate_grid([(u, lwu), (v, lwv)])
                if not np.any(np.isfinite(vals)):
                    continue
                best = np.unravel_index(np.argmax(vals), vals.shape)
                peak = vals[best]
                for axis_no, (idx, pos) in enumerate(((iu, best[0]), (iv, best[1]))):
                    if idx is None:
                        continue
                    ax = self.axes[axis_no]
                    if ax.pieces[idx][0] != "half":
                        continue
                    if peak > ax.best_peak[idx]:
                        ax.best_peak[idx] = peak
                        ax.scales[idx] = float(np.exp(_LOGX_GRID[pos]))

    def _log_density_u(self, u):
        """Log integrand per unit of the (single) mixing variable."""
        u = np.atleast_1d(np.asarray(u, float))
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            lw = self.axes[0].law.logpdf(u)
        return self._evaluate_grid([(u, lw)])

    def _sharp_split(self, piece, u_grid, best):
        """Sub-pieces isolating a peak that is too narrow for its piece.

        The grid maximum is refined with a bounded scalar search and the
        peak width is read off the curvature.  Returns ``None`` when the
        peak is wide enough for the plain rule.
        """
        lo_b = u_grid[max(best - 1, 0)]
        hi_b = u_grid[min(best + 1, len(u_grid) - 1)]
        lo_b, hi_b = min(lo_b, hi_b), max(lo_b, hi_b)
        if not hi_b > lo_b:
            return None

        def neg(x):
            v = float(self._log_density_u(x)[0])
            return -v if np.isfinite(v) else 1e300

        res = minimize_scalar(neg, bounds=(lo_b, hi_b), method="bounded", options={"xatol": 1e-10 * (hi_b - lo_b)})
        u_star, g_star = float(res.x), -float(res.fun)
        if not np.isfinite(g_star):
            return None
        delta = 1e-3 * (hi_b - lo_b)
        width = None
        for _ in range(6):
            g = self._log_density_u([u_star - delta, u_star + delta])
            curv = (g[0] - 2.0 * g_star + g[1]) / delta**2
            if not (np.isfinite(curv) and curv < 0.0):
                return None
            width = 1.0 / math.sqrt(-curv)
            if delta <= 0.1 * width:
                break
            delta = 0.1 * width
        if piece[0] == "half":
            _, lo, direction = piece
            extent = abs(u_star - lo)
        else:
            _, lo, hi = piece
            extent = hi - lo
        if not width < _SHARP * extent:
            return None
        half = _PEAK_HALF_WIDTH * width
        if piece[0] == "half":
            near = u_star - direction * half
            far = u_star + direction * half
            if direction * (near - lo) <= 0.0:
                near = lo
            out = [] if near == lo else [("finite", min(lo, near), max(lo, near))]
            out.append(("finite", min(near, far), max(near, far)))
            out.append(("half", far, direction))
            return out
        a, b = max(lo, u_star - half), min(hi, u_star + half)
        out = [("finite", lo, a)] if a > lo else []
        out.append(("finite", a, b))
        if b < hi:
            out.append(("finite", b, hi))
        return out

    def _axis_piece_nodes(self, axis, h):
        """Per-piece lists of (t, u, lw) with the atom case as a single entry."""
        if axis.atomic:
            return [(None, axis._atoms[0], axis._atoms[1])]
        return [axis._piece_nodes(i, h) for i in range(len(axis.pieces))]

    def _trim(self):
        h = _H0
        per_axis = [self._axis_piece_nodes(ax, h) for ax in self.axes]
        flat = []
        for lst in per_axis:
            u = np.concatenate([p[1] for p in lst])
            lw = np.concatenate([p[2] for p in lst])
            lw = np.where(np.isfinite(lw), lw, -np.inf)
            flat.append((u, lw))
        vals = self._evaluate_grid(flat)
        gmax = np.max(vals) if vals.size else -np.inf
        self.empty = not np.isfinite(gmax)
        if self.empty:
            return
        cut = gmax - _TRIM_DROP
        for axis_no, ax in enumerate(self.axes):
            if ax.atomic:
                continue
            profile = vals if vals.ndim == 1 else np.max(vals, axis=1 - axis_no)
            start = 0
            new_pieces, new_scales, new_windows = [], [], []
            for i, (t, u, lw) in enumerate(per_axis[axis_no]):
                seg = profile[start:start + len(t)]
                start += len(t)
                ok = np.nonzero(seg >= cut)[0]
                if ok.size == 0:
                    continue
                lo_t = max(t[ok[0]] - h, ax.windows[i][0])
                hi_t = min(t[ok[-1]] + h, ax.windows[i][1])
                new_pieces.append(ax.pieces[i])
                new_scales.append(ax.scales[i])
                new_windows.append((lo_t, hi_t))
            ax.pieces, ax.scales, ax.windows = new_pieces, new_scales, new_windows

    def nodes(self, h) -> NodeSet:
        sets = [ax.nodes(h) for ax in self.axes]
        with np.errstate(over="ignore", invalid="ignore"):
            if len(sets) == 1:
                u, lw = sets[0]
                r, s = self.spec.transform(u)
            else:
                (u, lwu), (v, lwv) = sets
                uu, vv = np.meshgrid(u, v, indexing="ij")
                r, s = self.spec.transform(uu.ravel(), vv.ravel())
                lw = (lwu[:, None] + lwv[None, :]).ravel()
        r = np.asarray(r, float)
        s = np.asarray(s, float)
        keep = np.isfinite(r) & np.isfinite(s)
        if not np.all(keep):
            r, s, lw = r[keep], s[keep], lw[keep]
        return NodeSet(r, s, lw)

    @property
    def max_level(self):
        return MAX_LEVEL_1D if len(self.axes) == 1 else MAX_LEVEL_2D

    @property
    def all_atomic(self):
        return all(ax.atomic for ax in self.axes)


def _lse(logw, lk):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        tot = logw.reshape((-1,) + (1,) * (lk.ndim - 1)) + lk
    tot = np.where(np.isnan(tot), -np.inf, tot)
    return logsumexp(tot, axis=0) if tot.shape[0] else np.full(lk.shape[1:], -np.inf)


def integrate_log(spec, log_kernel, rtol=1e-10, *, raise_on_failure=True, min_level=2, extra_levels=0) -> QuadEstimate:
    """Integrate a positive kernel against the law of (R, S) in log space.

    Parameters
    ----------
    spec : mixing composition
    log_kernel : callable
        ``log_kernel(r, s)`` for 1-d arrays of nodes; returns shape ``(N,)``
        or ``(N, m)`` for ``m`` simultaneous integrands.
    rtol : float
        Target relative agreement between two successive step halvings.
    extra_levels : int
        Refinements performed after convergence (used when the nodes are
        reused for a different integrand).

    Returns
    -------
    QuadEstimate
    """
    plan = _Plan(spec, log_kernel)
    if plan.empty:
        nodes = plan.nodes(_H0)
        shape = np.asarray(log_kernel(nodes.r[:1], nodes.s[:1])).shape[1:] if len(nodes) else ()
        return QuadEstimate(np.full(shape, -np.inf), 0.0, 0, nodes)
    if plan.all_atomic:
        nodes = plan.nodes(_H0)
        return QuadEstimate(_lse(nodes.logw, np.asarray(log_kernel(nodes.r, nodes.s))), 0.0, 0, nodes)
    prev = None
    err = math.inf
    level = 0
    while level <= plan.max_level:
        h = _H0 * 2.0 ** (-level)
        nodes = plan.nodes(h)
        cur = _lse(nodes.logw, np.asarray(log_kernel(nodes.r, nodes.s)))
        if prev is not None:
            both_zero = np.isneginf(cur) & np.isneginf(prev)
            with np.errstate(invalid="ignore", over="ignore"):
                diff = np.where(both_zero, 0.0, np.abs(np.expm1(cur - prev)))
            err = float(np.max(np.nan_to_num(diff, nan=math.inf))) if diff.size else 0.0
            if level >= min_level and err <= rtol:
                for _ in range(extra_levels):
                    level += 1
                    h *= 0.5
                    nodes = plan.nodes(h)
                    cur = _lse(nodes.logw, np.asarray(log_kernel(nodes.r, nodes.s)))
                return QuadEstimate(cur, err, level, nodes)
        prev = cur
        level += 1
    if raise_on_failure:
        raise QuadratureError(f"quadrature did not reach rtol={rtol:g} (estimate {err:.3g})", value=prev, error=err)
    return QuadEstimate(prev, err, plan.max_level, nodes)


def integrate_linear(spec, kernel, rtol=1e-10, atol=0.0, *, raise_on_failure=True, min_level=2):
    """Integrate a real or complex kernel against the law of (R, S).

    ``kernel(r, s)`` returns shape ``(N,)`` or ``(N, m)``.  Convergence is
    declared when successive halvings differ by at most
    ``max(rtol * |I|, atol)`` in every component.  Returns ``(value, error)``.
    """

    def log_mag(r, s):
        return _log_mag(np.asarray(kernel(r, s)))

    plan = _Plan(spec, log_mag, linear=True)
    prev = None
    err = math.inf
    level = 0
    while level <= plan.max_level:
        nodes = plan.nodes(_H0 * 2.0 ** (-level))
        with np.errstate(over="ignore", invalid="ignore"):
            vals = np.asarray(kernel(nodes.r, nodes.s))
        dead = nodes.logw < _LOG_TINY
        if np.any(dead):
            vals = np.where(dead.reshape((-1,) + (1,) * (vals.ndim - 1)), 0.0, vals)
        cur = nodes.integrate(vals) if len(nodes) else np.zeros(vals.shape[1:])
        if plan.all_atomic or plan.empty:
            return cur, 0.0
        if prev is not None:
            diff = np.abs(cur - prev)
            bound = np.maximum(rtol * np.abs(cur), atol)
            err = float(np.max(diff / np.maximum(np.abs(cur), 1e-300))) if diff.size else 0.0
            if level >= min_level and np.all(diff <= bound):
                return cur, err
        prev = cur
        level += 1
    if raise_on_failure:
        raise QuadratureError(f"quadrature did not reach rtol={rtol:g}", value=prev, error=err)
    return prev, err


def fixed_nodes(spec, budget: int) -> NodeSet:
    """A fixed node set of roughly ``budget`` points tuned to the law alone."""

    def zero(r, s):
        return np.zeros(np.shape(r))

    plan = _Plan(spec, zero)
    if plan.all_atomic:
        return plan.nodes(_H0)
    counts = []
    for ax in plan.axes:
        if ax.atomic:
            counts.append(None)
            continue
        counts.append(sum((w[1] - w[0]) for w in ax.windows))
    widths = [c for c in counts if c is not None]
    n_cont = len(widths)
    n_atoms = int(np.prod([len(ax._atoms[0]) for ax in plan.axes if ax.atomic])) if any(ax.atomic for ax in plan.axes) else 1
    per_axis = max(budget / n_atoms, 4.0) ** (1.0 / n_cont)
    h = max(widths) / per_axis
    return plan.nodes(h)
