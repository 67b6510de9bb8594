"""Stable evaluation of the singular density kernel and its integrals.

For ``N`` bands ``[alpha_i, beta_i]`` with one root ``zeta_m`` in each of
the ``N - 1`` gaps, the equilibrium density on the bands is
``|Z(s)| / (pi * sqrt(|Y(s)|))`` where

    Y(s) = prod_i (s - alpha_i) * (s - beta_i)
    Z(s) = prod_m (s - zeta_m)

and the roots are fixed by requiring the signed integral of ``Z / sqrt|Y|``
over every gap to vanish.  Each integral here rescales its own gap or band
onto ``[-1, 1]``; the rescaled interval's two endpoint factors of ``Y``
become the Chebyshev weight ``1 / (pi * sqrt(1 - x**2))``, which the
Gauss-Chebyshev rule integrates exactly, and the remaining factors form a
function that is smooth inside the interval.

Two evaluation paths are provided.  The log-space path sums logarithms of
all factors and cannot over- or underflow; it is the reference evaluator
and the one used for band integrals.  The grouped path divides each remote
root factor by a neighbouring pair of endpoint factors so that every
partial product stays O(1); remote ratios tend to 1, which mirrors the
small influence of distant gaps.  Both paths agree to ~1e-12 relative and
may be swapped freely.

All functions are pure; results depend only on the arguments, and node
sums always run in the fixed node order, so values are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BandSystem

# A point within this relative distance of a kernel root or endpoint is
# treated as an exact collision (the integrand value is meaningless there).
COLLISION_RTOL = 1e-15

_PROD_BLOCK = 256  # rows per block when accumulating long factor products


class ExactNodeCollision(ValueError):
    """Evaluation point coincides with a kernel root or band endpoint."""


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Chebyshev rule for the normalized weight 1/(pi*sqrt(1-x^2)).

    ``nodes`` are ``cos((2k - 1) pi / (2K))`` for ``k = 1..K`` and all
    weights equal ``1/K``; the rule is exact for polynomials of degree up
    to ``2K - 1`` against the unit-mass Chebyshev measure.
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.nodes.flags.writeable = False
        self.weights.flags.writeable = False

    @classmethod
    def chebyshev(cls, order: int) -> "QuadratureRule":
        if order < 1:
            raise ValueError(f"quadrature order must be positive, got {order}")
        k = np.arange(1, order + 1)
        nodes = np.cos((2 * k - 1) * np.pi / (2 * order))
        weights = np.full(order, 1.0 / order)
        return cls(order=order, nodes=nodes, weights=weights)


@dataclass(frozen=True)
class GapVariables:
    """Normalized gap roots: one ``lambda`` in (-1, 1) per gap.

    ``zetas`` are the same roots in original coordinates, obtained by the
    inverse of the per-gap rescaling; ``lambda = 0`` puts the root at the
    gap midpoint.
    """

    bands: BandSystem
    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        object.__setattr__(self, "lambdas", lam)
        lam.flags.writeable = False
        if lam.shape != (self.bands.n_gaps,):
            raise ValueError(
                f"expected {self.bands.n_gaps} gap variables, got shape {lam.shape}"
            )
        if lam.size and np.max(np.abs(lam)) >= 1.0:
            raise ValueError("gap variables must lie strictly inside (-1, 1)")

    @property
    def zetas(self) -> np.ndarray:
        lo, hi = self.bands.gap_los, self.bands.gap_his
        return 0.5 * (lo + hi) + 0.5 * (hi - lo) * self.lambdas


def _frame_interval(bands: BandSystem, frame: tuple[str, int]) -> tuple[float, float]:
    kind, i = frame
    if kind == "gap":
        return bands.gap_los[i], bands.gap_his[i]
    if kind == "band":
        return bands.alphas[i], bands.betas[i]
    raise ValueError(f"unknown frame kind {kind!r}")


def _to_frame(y, lo: float, hi: float):
    return (2.0 * y - (hi + lo)) / (hi - lo)


def _from_frame(x, lo: float, hi: float):
    return 0.5 * (x * (hi - lo) + (hi + lo))


def _check_collision(x: np.ndarray, points: np.ndarray) -> None:
    if x.size == 0 or points.size == 0:
        return
    diff = np.abs(x[:, None] - points[None, :])
    scale = np.maximum(1.0, np.maximum(np.abs(x)[:, None], np.abs(points)[None, :]))
    if np.any(diff < COLLISION_RTOL * scale):
        raise ExactNodeCollision("evaluation point coincides with a root or endpoint")


def kernel_log_magnitude(x, bands: BandSystem, vars: GapVariables, frame: tuple[str, int]):
    """Sign and log-magnitude of ``Z / sqrt|Y~|`` in a rescaled frame.

    ``frame`` names the interval mapped onto [-1, 1]: ``("gap", i)`` or
    ``("band", i)``.  The two endpoint factors of that interval are the
    ones absorbed into the Chebyshev weight and are omitted from ``Y~``.
    Returns ``(sign, log_magnitude)`` with the shapes of ``x``; the sign
    counts the negative numerator factors.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = _frame_interval(bands, frame)
    p = _to_frame(vars.zetas, lo, hi)
    kind, i = frame
    if kind == "gap":
        a_t = _to_frame(bands.alphas, lo, hi)
        b_t = _to_frame(bands.betas, lo, hi)
        endpoints = np.concatenate(
            [a_t[np.arange(bands.n_bands) != i + 1], b_t[np.arange(bands.n_bands) != i]]
        )
    else:
        mask = np.arange(bands.n_bands) != i
        endpoints = np.concatenate(
            [_to_frame(bands.alphas[mask], lo, hi), _to_frame(bands.betas[mask], lo, hi)]
        )
    _check_collision(x_arr, p)
    _check_collision(x_arr, endpoints)

    log_mag = np.zeros_like(x_arr)
    neg = np.zeros(x_arr.shape, dtype=int)
    if p.size:
        diff = x_arr[:, None] - p[None, :]
        log_mag += np.sum(np.log(np.abs(diff)), axis=1)
        neg += np.sum(diff < 0.0, axis=1)
    if endpoints.size:
        log_mag -= 0.5 * np.sum(np.log(np.abs(x_arr[:, None] - endpoints[None, :])), axis=1)
    sign = np.where(neg % 2 == 0, 1.0, -1.0)
    if np.isscalar(x) or np.asarray(x).ndim == 0:
        return float(sign[0]), float(log_mag[0])
    return sign, log_mag


def _gap_frame_points(bands: BandSystem, zetas: np.ndarray, i: int):
    lo, hi = bands.gap_los[i], bands.gap_his[i]
    p = _to_frame(zetas, lo, hi)
    a_t = _to_frame(bands.alphas, lo, hi)
    b_t = _to_frame(bands.betas, lo, hi)
    return p, a_t, b_t


def _grouped_reduced(x: np.ndarray, i: int, bands: BandSystem, zetas: np.ndarray):
    """Signed kernel in gap ``i``'s frame with the own-root factor removed.

    Returns ``(g, p)`` where the full kernel is ``(x - p[i]) * g``.  Root
    ``m < i`` is paired with the endpoints of band ``m`` and root ``m > i``
    with those of band ``m + 1``; every pairing leaves the two factors
    nearest the rescaled gap, ``|x - a_t[i]|`` and ``|x - b_t[i+1]|``,
    which are applied on their own.
    """
    p, a_t, b_t = _gap_frame_points(bands, zetas, i)
    n_gaps = p.size
    p_other = np.concatenate([p[:i], p[i + 1 :]])
    pair_a = np.concatenate([a_t[:i], a_t[i + 2 :]])
    pair_b = np.concatenate([b_t[:i], b_t[i + 2 :]])

    # Work with squared ratios: the paired endpoint factors have the same
    # sign on (-1, 1), so each denominator product is positive, and one
    # square root per block replaces one per factor.  Blockwise products
    # of O(1) ratios cannot over- or underflow.
    prod = np.ones_like(x)
    for start in range(0, p_other.size, _PROD_BLOCK):
        sl = slice(start, start + _PROD_BLOCK)
        num = x[None, :] - p_other[sl, None]
        den = (x[None, :] - pair_a[sl, None]) * (x[None, :] - pair_b[sl, None])
        prod *= np.sqrt(np.prod(num * num / den, axis=0))

    leftover = np.sqrt((x - a_t[i]) * (b_t[i + 1] - x))
    sign = -1.0 if (n_gaps - 1 - i) % 2 else 1.0
    return sign * prod / leftover, p


def kernel_grouped(x, i: int, bands: BandSystem, vars: GapVariables):
    """``Z / sqrt|Y~|`` in gap ``i``'s frame via grouped factor ratios.

    ``x`` must lie strictly inside (-1, 1) in the rescaled frame.  Agrees
    with the log-space evaluator to roundoff; partial products stay O(1)
    for any number of bands.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    _check_collision(x_arr, np.array([vars.lambdas[i]]))
    g, p = _grouped_reduced(x_arr, i, bands, vars.zetas)
    values = (x_arr - p[i]) * g
    if np.isscalar(x) or np.asarray(x).ndim == 0:
        return float(values[0])
    return values


def gap_integral(i: int, bands: BandSystem, vars: GapVariables, rule: QuadratureRule,
                 evaluator: str = "grouped") -> float:
    """Gauss-Chebyshev value of the signed root equation over gap ``i``.

    This is ``(1/pi) * integral of Z/sqrt|Y|`` over the gap after rescaling
    it to [-1, 1]; the gap's own endpoints supply the Chebyshev weight.  At
    the solution all these integrals vanish.
    """
    x = rule.nodes
    if evaluator == "grouped":
        _check_collision(x, np.array([vars.lambdas[i]]))
        g, p = _grouped_reduced(x, i, bands, vars.zetas)
        f = (x - p[i]) * g
    elif evaluator == "log":
        sign, log_mag = kernel_log_magnitude(x, bands, vars, ("gap", i))
        f = sign * np.exp(log_mag)
    else:
        raise ValueError(f"unknown evaluator {evaluator!r}")
    return float(rule.weights @ f)


def band_integral(i: int, bands: BandSystem, vars: GapVariables, rule: QuadratureRule) -> float:
    """Equilibrium measure of band ``i`` (harmonic frequency).

    The band is rescaled to [-1, 1] and ``|Z| / sqrt|Y~|`` is integrated
    against the Chebyshev weight; the log-space evaluator is used since
    band frames have no natural root/endpoint pairing.
    """
    _, log_mag = kernel_log_magnitude(rule.nodes, bands, vars, ("band", i))
    return float(rule.weights @ np.exp(log_mag))


def gap_jacobian_row(i: int, bands: BandSystem, vars: GapVariables,
                     rule: QuadratureRule) -> np.ndarray:
    """All derivatives ``d K_i / d lambda_m`` of one gap equation.

    Differentiating the Gaussian sum in its root ``zeta_m`` drops the
    ``m``-th numerator factor and multiplies by ``-A_i`` (the frame slope);
    the chain rule to the normalized variable contributes ``1 / A_m``.
    The dropped-factor products reuse the grouped kernel: dividing the full
    kernel by ``(x - p_m)`` is stable because only ``p_i`` lies inside the
    frame, and for ``m = i`` the reduced kernel is used directly.
    """
    x, w = rule.nodes, rule.weights
    _check_collision(x, np.array([vars.lambdas[i]]))
    g, p = _grouped_reduced(x, i, bands, vars.zetas)
    f = (x - p[i]) * g

    n_gaps = bands.n_gaps
    gap_w = bands.gap_widths
    row = np.empty(n_gaps)
    for start in range(0, n_gaps, _PROD_BLOCK):
        stop = min(start + _PROD_BLOCK, n_gaps)
        block = f[None, :] / (x[None, :] - p[start:stop, None])
        row[start:stop] = block @ w
    row *= -(gap_w / gap_w[i])
    row[i] = -float(g @ w)
    return row


def gap_jacobian(i: int, m: int, bands: BandSystem, vars: GapVariables,
                 rule: QuadratureRule) -> float:
    """Single Jacobian entry ``d K_i / d lambda_m``."""
    return float(gap_jacobian_row(i, bands, vars, rule)[m])


def refined_gap_order(bands: BandSystem, i: int, base_order: int, safety: float = 14.0) -> int:
    """Quadrature order resolving gap ``i``'s endpoint boundary layers.

    After rescaling, the nearest unabsorbed endpoint sits at distance
    ``eps = 2 * min(adjacent band widths) / gap width`` outside [-1, 1],
    which in the angular variable is a layer of width ``sqrt(2 * eps)``.
    The Gauss-Chebyshev error decays like ``exp(-2 K sqrt(2 eps))``, so
    ``K >= safety / sqrt(2 eps)`` drives it below ``exp(-2 * safety)``.
    Old gaps flanked by deep, nearly vanishing bands are the only ones that
    ever need more than a few hundred nodes.
    """
    widths = bands.band_widths
    eps = 2.0 * min(widths[i], widths[i + 1]) / bands.gap_widths[i]
    needed = int(math.ceil(safety / math.sqrt(2.0 * eps)))
    return max(base_order, needed)
