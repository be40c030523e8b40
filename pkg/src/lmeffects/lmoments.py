"""Empirical quantile functions, shifted Legendre polynomials, and exact
sample L-moments.

The r-th L-moment of a distribution is the integral of its quantile
function against the shifted Legendre polynomial of degree r - 1.  For an
empirical (step) quantile function that integral has a closed form: each
order statistic is multiplied by the exact integral of the polynomial over
its quantile step.  Everything here is computed that way; there is no
numerical quadrature anywhere, which keeps results bit-stable across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

#: Largest supported polynomial order (degree R - 1 = 63).
MAX_ORDER = 64


class Sample:
    """A sorted batch of scalar outcome observations.

    Construction sorts the input; the original order is not retained.
    Instances are immutable and safe to share across threads.
    """

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.asarray(values, dtype=float).ravel()
        if arr.size == 0:
            raise ValueError("sample must contain at least one observation")
        if not np.all(np.isfinite(arr)):
            raise ValueError("sample values must be finite")
        arr = np.sort(arr)
        arr.setflags(write=False)
        self.values = arr

    @property
    def n(self) -> int:
        return self.values.size

    def mean(self) -> float:
        return float(self.values.mean())

    def std(self) -> float:
        """Sample standard deviation (n - 1 convention); 0 for n = 1."""
        if self.n < 2:
            return 0.0
        return float(self.values.std(ddof=1))

    def quantile(self, u):
        """Empirical u-quantile, inf{x : F(x) >= u}.

        Returns the order statistic with rank ceil(n * u); u = 0 maps to
        the minimum by convention.  Accepts scalars or arrays.
        """
        u_arr = np.asarray(u, dtype=float)
        if np.any(u_arr < 0.0) or np.any(u_arr > 1.0):
            raise ValueError("quantile level must lie in [0, 1]")
        rank = np.clip(np.ceil(u_arr * self.n).astype(int), 1, self.n)
        out = self.values[rank - 1]
        return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out

    def __repr__(self):  # pragma: no cover
        return f"Sample(n={self.n})"


@dataclass(frozen=True)
class LegendreBasis:
    """Monomial coefficients of shifted Legendre polynomials on [0, 1].

    ``coeffs[r][k]`` is the exact integer coefficient of u**k in the
    degree-r polynomial, so no floating-point error enters construction at
    any supported order.
    """

    order: int
    coeffs: tuple

    def __post_init__(self):
        if not 1 <= self.order <= MAX_ORDER:
            raise ValueError(f"order must be in [1, {MAX_ORDER}], got {self.order}")


def shifted_legendre_basis(order: int) -> LegendreBasis:
    """Build the basis of shifted Legendre polynomials of degrees 0..order-1."""
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must be an integer in [1, {MAX_ORDER}], got {order!r}")
    rows = []
    for r in range(order):
        rows.append(
            tuple(
                (-1) ** (r - k) * math.comb(r, k) * math.comb(r + k, k)
                for k in range(r + 1)
            )
        )
    return LegendreBasis(int(order), tuple(rows))


def poly_integral(basis: LegendreBasis, r: int, a: float, b: float) -> float:
    """Exact integral of the degree-r basis polynomial over [a, b].

    Evaluated through the monomial antiderivative in rational arithmetic,
    then rounded once to float.
    """
    if not 0 <= r < basis.order:
        raise IndexError(f"degree {r} outside basis of order {basis.order}")
    if not (0.0 <= a <= b <= 1.0):
        raise ValueError("integration bounds must satisfy 0 <= a <= b <= 1")
    fa, fb = Fraction(a), Fraction(b)
    total = Fraction(0)
    for k, c in enumerate(basis.coeffs[r]):
        total += Fraction(c, k + 1) * (fb ** (k + 1) - fa ** (k + 1))
    return float(total)


def check_trim(trim) -> tuple:
    """Validate a (p_lo, p_hi) trimming range; (0, 1) means no trimming."""
    try:
        lo, hi = float(trim[0]), float(trim[1])
    except (TypeError, ValueError, IndexError):
        raise ValueError(f"trim must be a (p_lo, p_hi) pair, got {trim!r}") from None
    if not (0.0 <= lo < hi <= 1.0):
        raise ValueError(f"trim must satisfy 0 <= p_lo < p_hi <= 1, got {trim!r}")
    return lo, hi


def _legendre_values(max_degree, x):
    """P*_0 .. P*_max_degree evaluated at x, stacked on a leading axis.

    Uses the three-term recurrence, which is numerically stable on [0, 1]
    even at degrees where the monomial expansion cancels catastrophically.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((max_degree + 1,) + x.shape)
    out[0] = 1.0
    if max_degree >= 1:
        t = 2.0 * x - 1.0
        out[1] = t
        for n in range(1, max_degree):
            out[n + 1] = ((2 * n + 1) * t * out[n] - n * out[n - 1]) / (n + 1)
    return out


def _legendre_antiderivatives(n_moments, x):
    """I_r(x) = integral of P*_r from 0 to x, for r = 0 .. n_moments - 1.

    I_0(x) = x and, for r >= 1, I_r(x) = (P*_{r+1}(x) - P*_{r-1}(x)) /
    (2 (2r + 1)); each I_r vanishes at both endpoints for r >= 1.
    """
    x = np.asarray(x, dtype=float)
    values = _legendre_values(n_moments, x)
    out = np.empty((n_moments,) + x.shape)
    out[0] = x
    for r in range(1, n_moments):
        out[r] = (values[r + 1] - values[r - 1]) / (2.0 * (2 * r + 1))
    return out


def basis_integrals(n_moments: int, trim=(0.0, 1.0)) -> np.ndarray:
    """Vector of integrals of each basis polynomial over the trim range.

    With no trimming this is (1, 0, 0, ...) by orthogonality to the
    constant.
    """
    lo, hi = check_trim(trim)
    anti = _legendre_antiderivatives(n_moments, np.array([lo, hi]))
    return anti[:, 1] - anti[:, 0]


def step_integral_weights(right_edges, n_moments, trim=(0.0, 1.0)):
    """Exact basis integrals over each quantile step.

    For step functions with right endpoints ``right_edges`` (0 is the
    implicit left endpoint of the first step), entry [r, i] is the
    integral of the degree-r basis polynomial over step i intersected
    with the trim range.  Batched (B, n) edges give a (R, B, n) array.
    """
    lo, hi = check_trim(trim)
    right_edges = np.asarray(right_edges, dtype=float)
    batched = right_edges.ndim == 2
    edges_2d = np.atleast_2d(right_edges)
    nbatch, n = edges_2d.shape
    edges = np.empty((nbatch, n + 1))
    edges[:, 0] = 0.0
    edges[:, 1:] = edges_2d
    np.clip(edges, lo, hi, out=edges)
    anti = _legendre_antiderivatives(n_moments, edges)  # (R, B, n + 1)
    weights = np.diff(anti, axis=-1)                    # (R, B, n)
    return weights if batched else weights[:, 0, :]


def step_lmoments(values, right_edges, n_moments, trim=(0.0, 1.0)):
    """L-moments of a step quantile function, integrated in closed form.

    The quantile function takes ``values[i]`` on the probability interval
    (edge_{i-1}, edge_i], where the edges are 0 followed by
    ``right_edges`` (the last of which must reach 1 up to rounding).

    Parameters
    ----------
    values : (n,) array, nondecreasing step values (sorted outcomes).
    right_edges : (n,) or (B, n) array of right step endpoints.  A 2-d
        input evaluates B step functions sharing the same values, which is
        how reweighted bootstrap quantiles are batched.
    n_moments : number of L-moments to return.
    trim : (p_lo, p_hi) integration range.

    Returns
    -------
    (n_moments,) array, or (B, n_moments) for batched edges.
    """
    values = np.asarray(values, dtype=float)
    right_edges = np.asarray(right_edges, dtype=float)
    if values.shape[0] != right_edges.shape[-1]:
        raise ValueError("values and right_edges lengths do not match")
    weights = step_integral_weights(right_edges, n_moments, trim)
    out = weights @ values
    return out.T if right_edges.ndim == 2 else out


def lmoments(sample: Sample, n_moments: int, trim=(0.0, 1.0)) -> np.ndarray:
    """First ``n_moments`` sample L-moments over the trim range.

    With no trimming the first entry equals the sample mean; the second is
    half Gini's mean difference.
    """
    if not 1 <= n_moments <= MAX_ORDER:
        raise ValueError(f"n_moments must be in [1, {MAX_ORDER}], got {n_moments}")
    n = sample.n
    cum = np.arange(1, n + 1) / n
    return step_lmoments(sample.values, cum, n_moments, trim)
