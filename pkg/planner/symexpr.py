"""Exact polynomial arithmetic over named dimension symbols.

Every cost formula in the planner is a polynomial in graph dimensions
(hidden size, vocabulary, sequence length, subbatch, ...). ``DimExpr``
keeps those formulas in a canonical sum-of-monomials form with exact
rational coefficients; evaluation only turns into floating point at the
very last step.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, Mapping, Tuple, Union

import sympy
from sympy.parsing.sympy_parser import parse_expr, standard_transformations
from sympy.polys.polyerrors import PolynomialError

from planner.exceptions import ExpressionParseError, InvalidConfig, UnboundSymbol

Monomial = Tuple[Tuple[str, int], ...]
Number = Union[int, float, Fraction]
Operand = Union["DimExpr", int, Fraction]

_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_ALLOWED_TEXT = re.compile(r"^[0-9A-Za-z_+\-*/^() \t]+$")


@dataclass(frozen=True)
class Symbol:
    name: str

    def __post_init__(self) -> None:
        if not self.name or not _IDENTIFIER.fullmatch(self.name):
            raise ExpressionParseError(f"Invalid symbol name: '{self.name}'")

    @property
    def expr(self) -> DimExpr:
        return DimExpr.symbol(self.name)

    def __str__(self) -> str:
        return self.name


BindingKey = Union[str, Symbol]
Binding = Mapping[BindingKey, Number]


def _normalize_binding(binding: Binding) -> Dict[str, Fraction]:
    resolved: Dict[str, Fraction] = {}
    for key, value in binding.items():
        name = key.name if isinstance(key, Symbol) else key
        resolved[name] = value if isinstance(value, Fraction) else Fraction(value)
    return resolved


def _monomial_key(monomial: Monomial) -> tuple:
    # constants print last; otherwise lexicographic by symbol, higher powers first
    degree = sum(exp for _, exp in monomial)
    return (
        0 if monomial else 1,
        tuple((name, -exp) for name, exp in monomial),
        -degree,
    )


def _merge(a: Monomial, b: Monomial) -> Monomial:
    powers: Dict[str, int] = dict(a)
    for name, exp in b:
        powers[name] = powers.get(name, 0) + exp
    return tuple(sorted(powers.items()))


class DimExpr:
    """Immutable canonical polynomial with rational coefficients."""

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Monomial, Fraction] | None = None) -> None:
        cleaned = {
            tuple(sorted(mono)): Fraction(coef)
            for mono, coef in (terms or {}).items()
            if coef != 0
        }
        ordered = sorted(cleaned.items(), key=lambda item: _monomial_key(item[0]))
        self._terms: Tuple[Tuple[Monomial, Fraction], ...] = tuple(ordered)
        self._hash = hash(self._terms)

    @classmethod
    def constant(cls, value: Union[int, Fraction]) -> DimExpr:
        return cls({(): Fraction(value)})

    @classmethod
    def symbol(cls, name: str) -> DimExpr:
        Symbol(name)
        return cls({((name, 1),): Fraction(1)})

    @property
    def terms(self) -> Tuple[Tuple[Monomial, Fraction], ...]:
        return self._terms

    def symbols(self) -> frozenset[str]:
        return frozenset(name for mono, _ in self._terms for name, _ in mono)

    def is_constant(self) -> bool:
        return all(not mono for mono, _ in self._terms)

    def constant_value(self) -> Fraction:
        if not self.is_constant():
            raise UnboundSymbol(sorted(self.symbols())[0])
        return self._terms[0][1] if self._terms else Fraction(0)

    def degree_in(self, symbol: Union[str, Symbol]) -> int:
        name = symbol.name if isinstance(symbol, Symbol) else symbol
        return max(
            (dict(mono).get(name, 0) for mono, _ in self._terms),
            default=0,
        )

    def total_degree(self) -> int:
        return max((sum(e for _, e in mono) for mono, _ in self._terms), default=0)

    # arithmetic

    def __add__(self, other: Operand) -> DimExpr:
        rhs = as_expr(other)
        terms: Dict[Monomial, Fraction] = dict(self._terms)
        for mono, coef in rhs._terms:
            terms[mono] = terms.get(mono, Fraction(0)) + coef
        return DimExpr(terms)

    __radd__ = __add__

    def __neg__(self) -> DimExpr:
        return DimExpr({mono: -coef for mono, coef in self._terms})

    def __sub__(self, other: Operand) -> DimExpr:
        return self + (-as_expr(other))

    def __rsub__(self, other: Operand) -> DimExpr:
        return as_expr(other) - self

    def __mul__(self, other: Operand) -> DimExpr:
        rhs = as_expr(other)
        terms: Dict[Monomial, Fraction] = {}
        for mono_a, coef_a in self._terms:
            for mono_b, coef_b in rhs._terms:
                mono = _merge(mono_a, mono_b)
                terms[mono] = terms.get(mono, Fraction(0)) + coef_a * coef_b
        return DimExpr(terms)

    __rmul__ = __mul__

    def __pow__(self, exponent: int) -> DimExpr:
        if not isinstance(exponent, int) or exponent < 0:
            raise ExpressionParseError("Only non-negative integer powers are supported")
        result = DimExpr.constant(1)
        for _ in range(exponent):
            result = result * self
        return result

    def __truediv__(self, other: Union[int, Fraction, DimExpr]) -> DimExpr:
        if isinstance(other, DimExpr):
            if not other.is_constant():
                raise ExpressionParseError("Division by a symbolic expression")
            other = other.constant_value()
        if other == 0:
            raise ZeroDivisionError("Division of a dimension expression by zero")
        return self * (1 / Fraction(other))

    def __eq__(self, other: object) -> bool:
        if isinstance(other, (int, Fraction)):
            other = DimExpr.constant(other)
        if not isinstance(other, DimExpr):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self) -> int:
        return self._hash

    def __bool__(self) -> bool:
        return bool(self._terms)

    # binding

    def substitute(self, binding: Binding) -> DimExpr:
        values = _normalize_binding(binding)
        terms: Dict[Monomial, Fraction] = {}
        for mono, coef in self._terms:
            residual = []
            for name, exp in mono:
                if name in values:
                    coef = coef * values[name] ** exp
                else:
                    residual.append((name, exp))
            key = tuple(residual)
            terms[key] = terms.get(key, Fraction(0)) + coef
        return DimExpr(terms)

    def evaluate_exact(self, binding: Binding) -> Fraction:
        """Exact value; every symbol must be bound to a non-negative size."""
        values = _normalize_binding(binding)
        result = Fraction(0)
        for mono, coef in self._terms:
            value = coef
            for name, exp in mono:
                if name not in values:
                    raise UnboundSymbol(name)
                if values[name] < 0:
                    raise InvalidConfig(f"dimension '{name}' is bound to negative value {values[name]}")
                value *= values[name] ** exp
            result += value
        return result

    def evaluate(self, binding: Binding) -> float:
        return float(self.evaluate_exact(binding))

    def __str__(self) -> str:
        return render(self)

    def __repr__(self) -> str:
        return f"DimExpr('{render(self)}')"


def as_expr(value: Operand) -> DimExpr:
    if isinstance(value, DimExpr):
        return value
    if isinstance(value, (int, Fraction)) and not isinstance(value, bool):
        return DimExpr.constant(value)
    raise TypeError(f"Cannot use {type(value).__name__} as a dimension expression")


def sym(name: str) -> DimExpr:
    return DimExpr.symbol(name)


def symbols(names: str) -> Tuple[DimExpr, ...]:
    return tuple(sym(name) for name in names.split())


def add(a: Operand, b: Operand) -> DimExpr:
    return as_expr(a) + as_expr(b)


def mul(a: Operand, b: Operand) -> DimExpr:
    return as_expr(a) * as_expr(b)


def product(factors: Iterable[Operand]) -> DimExpr:
    result = DimExpr.constant(1)
    for factor in factors:
        result = result * factor
    return result


def total(items: Iterable[Operand]) -> DimExpr:
    result = DimExpr()
    for item in items:
        result = result + item
    return result


def substitute(expr: DimExpr, binding: Binding) -> DimExpr:
    return expr.substitute(binding)


def evaluate(expr: DimExpr, binding: Binding) -> float:
    return expr.evaluate(binding)


def degree_in(expr: DimExpr, symbol: Union[str, Symbol]) -> int:
    return expr.degree_in(symbol)


def _format_coefficient(coef: Fraction) -> str:
    if coef.denominator == 1:
        return str(coef.numerator)
    return f"{coef.numerator}/{coef.denominator}"


def render(expr: DimExpr) -> str:
    """Render as e.g. ``8*h^2*l + 2*h*v``; ``parse(render(e)) == e``."""
    if not expr.terms:
        return "0"
    pieces = []
    for index, (mono, coef) in enumerate(expr.terms):
        negative = coef < 0
        magnitude = -coef if negative else coef
        factors = [name if exp == 1 else f"{name}^{exp}" for name, exp in mono]
        if magnitude != 1 or not factors:
            factors.insert(0, _format_coefficient(magnitude))
        body = "*".join(factors)
        if index == 0:
            pieces.append(f"-{body}" if negative else body)
        else:
            pieces.append(f"- {body}" if negative else f"+ {body}")
    return " ".join(pieces)


def parse(text: str) -> DimExpr:
    """Parse the rendering grammar: integers, rationals, symbols, + - * / ^."""
    if not text or not text.strip():
        raise ExpressionParseError("Empty expression")
    if not _ALLOWED_TEXT.match(text):
        raise ExpressionParseError(f"Unsupported characters in expression: '{text}'")

    local = {name: sympy.Symbol(name) for name in set(_IDENTIFIER.findall(text))}
    try:
        parsed = parse_expr(
            text.replace("^", "**"),
            local_dict=local,
            transformations=standard_transformations,
            evaluate=True,
        )
    except Exception as exc:  # sympy raises SyntaxError, TokenError, TypeError
        raise ExpressionParseError(f"Cannot parse '{text}': {exc}") from exc

    generators = sorted(parsed.free_symbols, key=lambda s: s.name)
    if not generators:
        if not parsed.is_Rational:
            raise ExpressionParseError(f"Constant '{text}' is not rational")
        return DimExpr.constant(Fraction(int(parsed.p), int(parsed.q)))

    try:
        poly = sympy.Poly(parsed, *generators)
    except PolynomialError as exc:
        raise ExpressionParseError(f"'{text}' is not a polynomial") from exc

    terms: Dict[Monomial, Fraction] = {}
    for exponents, coef in poly.terms():
        if not coef.is_Rational:
            raise ExpressionParseError(f"Coefficient {coef} in '{text}' is not rational")
        mono = tuple(
            (gen.name, int(exp)) for gen, exp in zip(generators, exponents) if exp
        )
        terms[mono] = Fraction(int(coef.p), int(coef.q))
    return DimExpr(terms)
