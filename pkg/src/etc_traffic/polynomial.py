"""Sparse multivariate polynomials with float coefficients.

Polynomials are immutable maps from exponent tuples to nonzero coefficients.
They support the handful of exact symbolic operations the rest of the package
needs (sums, products, partial derivatives, substitution, Lie derivatives) and
fast vectorised evaluation on point batches.

Text syntax
-----------
``parse_polynomial`` accepts sums of products built from numbers, variable
names, ``+ - *``, integer powers written ``^`` and parentheses::

    x1^3 + x1*x2^2
    -0.5 * (x1 + x2)^2 - 3e-2 * x2

Juxtaposition is an error (``2x1`` and ``x1 x2`` are rejected), as is ``**``.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

Exponent = tuple[int, ...]


def _grlex_key(exp: Exponent) -> tuple:
    return (-sum(exp), tuple(-e for e in exp))


class Polynomial:
    """Immutable sparse polynomial in ``nvars`` variables."""

    __slots__ = ("_terms", "_nvars", "_arrays")

    def __init__(self, terms: Mapping[Exponent, float] | Iterable, nvars: int):
        if nvars < 0:
            raise ValueError("nvars must be nonnegative")
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[Exponent, float] = {}
        for exp, coeff in items:
            exp = tuple(int(e) for e in exp)
            if len(exp) != nvars:
                raise ValueError(f"exponent {exp} does not have length {nvars}")
            if any(e < 0 for e in exp):
                raise ValueError(f"negative exponent in {exp}")
            acc[exp] = acc.get(exp, 0.0) + float(coeff)
        self._terms = {e: acc[e] for e in sorted(acc, key=_grlex_key) if acc[e] != 0.0}
        self._nvars = nvars
        self._arrays = None

    # construction helpers -------------------------------------------------
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls({}, nvars)

    @classmethod
    def constant(cls, value: float, nvars: int) -> "Polynomial":
        return cls({(0,) * nvars: value}, nvars)

    @classmethod
    def variable(cls, index: int, nvars: int) -> "Polynomial":
        if not 0 <= index < nvars:
            raise ValueError(f"variable index {index} out of range for {nvars} variables")
        exp = [0] * nvars
        exp[index] = 1
        return cls({tuple(exp): 1.0}, nvars)

    # basic accessors -------------------------------------------------------
    @property
    def nvars(self) -> int:
        return self._nvars

    @property
    def terms(self) -> dict[Exponent, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(e) for e in self._terms), default=-1)

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other, self._nvars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._nvars == other._nvars and self._terms == other._terms

    def __hash__(self) -> int:
        return hash((self._nvars, tuple(self._terms.items())))

    def __repr__(self) -> str:
        return f"Polynomial({self.to_text()!r}, nvars={self._nvars})"

    # arithmetic -----------------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other._nvars != self._nvars:
                raise ValueError(
                    f"dimension mismatch: {self._nvars} vs {other._nvars} variables"
                )
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(other), self._nvars)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self._terms)
        for e, c in other._terms.items():
            terms[e] = terms.get(e, 0.0) + c
        return Polynomial(terms, self._nvars)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({e: -c for e, c in self._terms.items()}, self._nvars)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms: dict[Exponent, float] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, 0.0) + c1 * c2
        return Polynomial(terms, self._nvars)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError("only nonnegative integer powers are supported")
        result = Polynomial.constant(1.0, self._nvars)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def scale(self, factor: float) -> "Polynomial":
        return Polynomial({e: c * factor for e, c in self._terms.items()}, self._nvars)

    # calculus / substitution --------------------------------------------
    def diff(self, k: int) -> "Polynomial":
        """Partial derivative with respect to variable ``k``."""
        if not 0 <= k < self._nvars:
            raise ValueError(f"variable index {k} out of range")
        terms = {}
        for e, c in self._terms.items():
            if e[k]:
                ne = list(e)
                ne[k] -= 1
                terms[tuple(ne)] = c * e[k]
        return Polynomial(terms, self._nvars)

    def gradient(self) -> list["Polynomial"]:
        return [self.diff(k) for k in range(self._nvars)]

    def compose(self, subs: Sequence["Polynomial"]) -> "Polynomial":
        """Substitute ``subs[k]`` for variable ``k``.

        All substitutes must share one ambient dimension, which becomes the
        dimension of the result.
        """
        if len(subs) != self._nvars:
            raise ValueError(f"need {self._nvars} substitutes, got {len(subs)}")
        if not subs:
            return self
        m = subs[0].nvars
        if any(s.nvars != m for s in subs):
            raise ValueError("substitutes live in different dimensions")
        powers: list[dict[int, Polynomial]] = [{0: Polynomial.constant(1.0, m)} for _ in subs]

        def power(k: int, e: int) -> Polynomial:
            table = powers[k]
            if e not in table:
                table[e] = power(k, e - 1) * subs[k]
            return table[e]

        out = Polynomial.zero(m)
        for e, c in self._terms.items():
            term = Polynomial.constant(c, m)
            for k, ek in enumerate(e):
                if ek:
                    term = term * power(k, ek)
            out = out + term
        return out

    def embed(self, nvars: int, offset: int = 0) -> "Polynomial":
        """Re-express in ``nvars`` variables, mapping variable k to ``offset + k``."""
        if offset + self._nvars > nvars:
            raise ValueError("embedding does not fit")
        terms = {}
        for e, c in self._terms.items():
            ne = [0] * nvars
            ne[offset:offset + self._nvars] = e
            terms[tuple(ne)] = c
        return Polynomial(terms, nvars)

    # evaluation -----------------------------------------------------------
    def __call__(self, x: Sequence[float]) -> float:
        return eval_poly(self, x)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Exponent matrix (terms x nvars) and coefficient vector."""
        if self._arrays is None:
            if self._terms:
                exps = np.array(list(self._terms.keys()), dtype=np.int64)
                coeffs = np.array(list(self._terms.values()), dtype=float)
            else:
                exps = np.zeros((0, self._nvars), dtype=np.int64)
                coeffs = np.zeros(0)
            self._arrays = (exps, coeffs)
        return self._arrays

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Vectorised evaluation on an ``(N, nvars)`` array."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.shape[-1] != self._nvars:
            raise ValueError(
                f"dimension mismatch: points have {pts.shape[-1]} coordinates, "
                f"polynomial has {self._nvars} variables"
            )
        exps, coeffs = self.arrays()
        if coeffs.size == 0:
            return np.zeros(pts.shape[:-1])
        mono = np.ones(pts.shape[:-1] + (coeffs.size,))
        for k in range(self._nvars):
            col = exps[:, k]
            if col.any():
                mono *= pts[..., k, None] ** col
        return mono @ coeffs

    # text ----------------------------------------------------------------
    def to_text(self, names: Sequence[str] | None = None) -> str:
        if names is None:
            names = [f"x{k + 1}" for k in range(self._nvars)]
        if not self._terms:
            return "0"
        parts = []
        for e, c in self._terms.items():
            factors = [repr(abs(c))] if (abs(c) != 1.0 or not any(e)) else []
            for k, ek in enumerate(e):
                if ek == 1:
                    factors.append(names[k])
                elif ek > 1:
                    factors.append(f"{names[k]}^{ek}")
            body = " * ".join(factors)
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first_body = parts[0]
        text = ("-" if first_sign == "-" else "") + first_body
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return text


def eval_poly(p: Polynomial, x: Sequence[float]) -> float:
    """Evaluate ``p`` at a single point using compensated summation."""
    x = [float(v) for v in np.ravel(np.asarray(x, dtype=float))]
    if len(x) != p.nvars:
        raise ValueError(
            f"dimension mismatch: point has {len(x)} coordinates, "
            f"polynomial has {p.nvars} variables"
        )
    return math.fsum(c * math.prod(xk ** ek for xk, ek in zip(x, e) if ek)
                     for e, c in p.items())


class PolyVectorField:
    """Ordered tuple of polynomials over a common ambient space."""

    __slots__ = ("components", "nvars")

    def __init__(self, components: Sequence[Polynomial], nvars: int | None = None):
        comps = tuple(components)
        if nvars is None:
            if not comps:
                raise ValueError("cannot infer dimension of an empty field")
            nvars = comps[0].nvars
        if any(c.nvars != nvars for c in comps):
            raise ValueError("components live in different dimensions")
        self.components = comps
        self.nvars = nvars

    @property
    def dimension(self) -> int:
        return len(self.components)

    def is_square(self) -> bool:
        return self.dimension == self.nvars

    def __len__(self) -> int:
        return len(self.components)

    def __getitem__(self, k):
        return self.components[k]

    def __iter__(self):
        return iter(self.components)

    def __eq__(self, other) -> bool:
        return (isinstance(other, PolyVectorField) and self.nvars == other.nvars
                and self.components == other.components)

    def __hash__(self) -> int:
        return hash((self.nvars, self.components))

    def __neg__(self) -> "PolyVectorField":
        return PolyVectorField([-c for c in self.components], self.nvars)

    def __call__(self, x: Sequence[float]) -> np.ndarray:
        return np.array([eval_poly(c, x) for c in self.components])

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.stack([c.evaluate(pts) for c in self.components], axis=-1)

    def compose(self, subs: Sequence[Polynomial]) -> "PolyVectorField":
        return PolyVectorField([c.compose(subs) for c in self.components],
                               subs[0].nvars if subs else self.nvars)

    def jacobian(self) -> list[list[Polynomial]]:
        return [c.gradient() for c in self.components]

    def to_text(self, names: Sequence[str] | None = None) -> list[str]:
        return [c.to_text(names) for c in self.components]


def lie_derivative(h: Polynomial, f: PolyVectorField) -> Polynomial:
    """Lie derivative ``sum_k dh/dx_k * f_k``."""
    if not f.is_square():
        raise ValueError("vector field must map its ambient space to itself")
    if h.nvars != f.nvars:
        raise ValueError(f"dimension mismatch: h has {h.nvars} variables, field has {f.nvars}")
    out = Polynomial.zero(h.nvars)
    for k, fk in enumerate(f.components):
        dk = h.diff(k)
        if not dk.is_zero():
            out = out + dk * fk
    return out


def lie_derivatives(h: Polynomial, f: PolyVectorField, order: int) -> list[Polynomial]:
    """``[h, L_f h, ..., L_f^order h]``."""
    chain = [h]
    for _ in range(order):
        chain.append(lie_derivative(chain[-1], f))
    return chain


class Homogeneity(NamedTuple):
    degree: int | None
    offending: tuple[int, Exponent] | None = None

    @property
    def homogeneous(self) -> bool:
        return self.degree is not None


def homogeneity_degree(f: PolyVectorField) -> Homogeneity:
    """Classical homogeneity degree of a polynomial vector field.

    Returns ``Homogeneity(alpha)`` when every monomial of every component has
    total degree ``alpha + 1``. Otherwise ``degree`` is None and ``offending``
    names the first monomial (component index, exponent) whose degree differs
    from the most common one (ties go to the lower degree).
    """
    if not f.is_square():
        raise ValueError("homogeneity is defined for square fields only")
    degrees = Counter(sum(exp) for comp in f.components for exp in comp.terms)
    if not degrees:
        return Homogeneity(None, None)
    reference = min(degrees, key=lambda d: (-degrees[d], d))
    for ci, comp in enumerate(f.components):
        for exp in comp.terms:
            if sum(exp) != reference:
                return Homogeneity(None, (ci, exp))
    return Homogeneity(reference - 1)


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*^()]))"
)


class PolynomialSyntaxError(ValueError):
    pass


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise PolynomialSyntaxError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        kind = m.lastgroup
        value = m.group(kind)
        if kind == "op" and value == "**":
            raise PolynomialSyntaxError("use '^' for powers, not '**'")
        if tokens and kind in ("num", "name") and tokens[-1][0] in ("num", "name"):
            raise PolynomialSyntaxError(
                f"implicit multiplication is not allowed near {value!r}; write '*'"
            )
        if tokens and kind in ("num", "name") and tokens[-1] == ("op", ")"):
            raise PolynomialSyntaxError("implicit multiplication after ')' is not allowed")
        if tokens and value == "(" and tokens[-1][0] in ("num", "name"):
            raise PolynomialSyntaxError("implicit multiplication before '(' is not allowed")
        tokens.append((kind, value))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens, names: Sequence[str]):
        self.tokens = tokens
        self.i = 0
        self.index = {n: k for k, n in enumerate(names)}
        self.nvars = len(names)

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expr(self) -> Polynomial:
        out = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            out = out + rhs if op == "+" else out - rhs
        return out

    def term(self) -> Polynomial:
        out = self.factor()
        while self.peek()[1] == "*":
            self.take()
            out = out * self.factor()
        return out

    def factor(self) -> Polynomial:
        if self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            inner = self.factor()
            return -inner if op == "-" else inner
        return self.power()

    def power(self) -> Polynomial:
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            kind, value = self.take()
            if kind != "num" or not value.isdigit():
                raise PolynomialSyntaxError(f"exponent must be a nonnegative integer, got {value!r}")
            base = base ** int(value)
        return base

    def atom(self) -> Polynomial:
        kind, value = self.take()
        if kind == "num":
            return Polynomial.constant(float(value), self.nvars)
        if kind == "name":
            if value not in self.index:
                raise PolynomialSyntaxError(
                    f"unknown variable {value!r}; expected one of {sorted(self.index)}"
                )
            return Polynomial.variable(self.index[value], self.nvars)
        if value == "(":
            inner = self.expr()
            if self.take()[1] != ")":
                raise PolynomialSyntaxError("unbalanced parentheses")
            return inner
        raise PolynomialSyntaxError(f"unexpected token {value!r}")


def parse_polynomial(text: str, names: Sequence[str]) -> Polynomial:
    """Parse ``text`` as a polynomial in the variables ``names``."""
    tokens = _tokenize(text)
    if not tokens:
        raise PolynomialSyntaxError("empty polynomial")
    parser = _Parser(tokens, names)
    out = parser.expr()
    if parser.i != len(tokens):
        raise PolynomialSyntaxError(f"trailing input starting at token {tokens[parser.i][1]!r}")
    return out


def default_names(n: int, prefix: str = "x") -> list[str]:
    return [f"{prefix}{k + 1}" for k in range(n)]
