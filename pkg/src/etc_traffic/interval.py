"""Vectorised interval enclosures of polynomials over boxes.

Boxes are passed as a pair of ``(N, nvars)`` arrays of lower and upper
bounds. Every routine returns a pair of ``(N,)`` arrays bounding the range
of the polynomial on each box. Float rounding is handled by widening each
intermediate result outward by a relative amount that dominates the
accumulated error of the operation, so results are rigorous enclosures of
the exact real range.
"""

from __future__ import annotations

import numpy as np

from .polynomial import Polynomial

EPS = np.finfo(float).eps
TINY = 1e-300


def widen(lo, hi, rel: float = 4 * EPS):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return lo - np.abs(lo) * rel - TINY, hi + np.abs(hi) * rel + TINY


def imul(alo, ahi, blo, bhi):
    p = np.stack([alo * blo, alo * bhi, ahi * blo, ahi * bhi])
    return widen(p.min(axis=0), p.max(axis=0), 2 * EPS)


def isq(lo, hi):
    """Range of ``x**2`` (tighter than ``imul(x, x)``)."""
    return ipow(lo, hi, 2)


def ipow(lo, hi, k: int):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if k == 0:
        return np.ones_like(lo), np.ones_like(hi)
    if k == 1:
        return lo, hi
    a = lo ** k
    b = hi ** k
    if k % 2:
        rlo, rhi = a, b
    else:
        straddle = (lo <= 0) & (hi >= 0)
        rlo = np.where(straddle, 0.0, np.minimum(a, b))
        rhi = np.maximum(a, b)
    return widen(rlo, rhi, (k + 1) * EPS)


def ihull_contains(lo, hi, value) -> np.ndarray:
    return (lo <= value) & (value <= hi)


class BoxEnclosure:
    """Range enclosure of one polynomial over batches of boxes.

    Combines the natural interval extension with the mean-value form
    ``p(c) + sum_k dp/dx_k(X) * (X_k - c_k)`` and returns their intersection.
    The mean-value form is quadratically accurate in the box width, which is
    what makes thin certification margins reachable with few boxes.
    """

    def __init__(self, poly: Polynomial, mean_value: bool = True):
        self.poly = poly
        self.nvars = poly.nvars
        self.exps, self.coeffs = poly.arrays()
        self.maxexp = self.exps.max(axis=0) if self.coeffs.size else np.zeros(self.nvars, int)
        self.grads = None
        if mean_value and poly.degree >= 2:
            self.grads = [BoxEnclosure(g, mean_value=False) for g in poly.gradient()]

    def natural(self, lo, hi):
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        hi = np.atleast_2d(np.asarray(hi, dtype=float))
        n = lo.shape[0]
        if self.coeffs.size == 0:
            z = np.zeros(n)
            return z, z.copy()
        table = []
        for k in range(self.nvars):
            row = {}
            for e in np.unique(self.exps[:, k]):
                row[int(e)] = ipow(lo[:, k], hi[:, k], int(e))
            table.append(row)
        acc_lo = np.zeros(n)
        acc_hi = np.zeros(n)
        mag = np.zeros(n)
        for exp, c in zip(self.exps, self.coeffs):
            tlo = np.ones(n)
            thi = np.ones(n)
            first = True
            for k, e in enumerate(exp):
                if e == 0:
                    continue
                plo, phi = table[k][int(e)]
                if first:
                    tlo, thi = plo, phi
                    first = False
                else:
                    tlo, thi = imul(tlo, thi, plo, phi)
            if c >= 0:
                clo, chi = c * tlo, c * thi
            else:
                clo, chi = c * thi, c * tlo
            acc_lo = acc_lo + clo
            acc_hi = acc_hi + chi
            mag = mag + np.maximum(np.abs(clo), np.abs(chi))
        # summation error bound for len(coeffs) terms, plus coefficient product
        err = (self.coeffs.size + 2) * EPS * mag
        return acc_lo - err - TINY, acc_hi + err + TINY

    def point(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.natural(x, x)

    def mean_value(self, lo, hi):
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        hi = np.atleast_2d(np.asarray(hi, dtype=float))
        if self.grads is None:
            return self.natural(lo, hi)
        c = 0.5 * (lo + hi)
        vlo, vhi = self.point(c)
        dlo_all = lo - c
        dhi_all = hi - c
        for k, g in enumerate(self.grads):
            if g.coeffs.size == 0:
                continue
            glo, ghi = g.natural(lo, hi)
            plo, phi = imul(glo, ghi, dlo_all[:, k], dhi_all[:, k])
            vlo = vlo + plo
            vhi = vhi + phi
        return widen(vlo, vhi, (self.nvars + 2) * EPS)

    def __call__(self, lo, hi):
        nlo, nhi = self.natural(lo, hi)
        if self.grads is None:
            return nlo, nhi
        mlo, mhi = self.mean_value(lo, hi)
        return np.maximum(nlo, mlo), np.minimum(nhi, mhi)


def box_norm_sq_range(lo, hi):
    """Range of ``|x|^2`` over each box."""
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    sq_lo, sq_hi = ipow(lo, hi, 2)
    return sq_lo.sum(axis=1), sq_hi.sum(axis=1)
