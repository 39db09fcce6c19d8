"""Concrete text syntax for formulas.

Grammar (lowest precedence first)::

    or     := and ('|' and)*
    and    := until ('&' until)*
    until  := unary ('U' interval until)?
    unary  := '!' unary | 'F' interval unary | 'G' interval unary | atom
    atom   := 'true' | 'x' INT ('>=' | '<=') NUMBER | '(' or ')'
    interval := ('[' | '(') NUMBER ',' NUMBER (']' | ')')
"""
from __future__ import annotations

import re

from ..errors import MtlSyntaxError
from .ast import (TRUE, Always, And, Eventually, Formula, Interval, Not, Or, Predicate,
                  TrueF, Until)

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<var>x\d+)
  | (?P<kw>true|F|G|U)
  | (?P<cmp>>=|<=)
  | (?P<op>[!&|()\[\],])
""", re.VERBOSE)


def _tokenize(text):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise MtlSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("eof", "", pos))
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None, kind=None):
        tok = self.toks[self.i]
        if (value is not None and tok[1] != value) or (kind is not None and tok[0] != kind):
            want = value if value is not None else kind
            got = tok[1] or "end of input"
            raise MtlSyntaxError(f"expected {want!r}, found {got!r}", tok[2])
        self.i += 1
        return tok

    def parse(self):
        phi = self.or_()
        tok = self.peek()
        if tok[0] != "eof":
            raise MtlSyntaxError(f"unexpected {tok[1]!r}", tok[2])
        return phi

    def or_(self):
        left = self.and_()
        while self.peek()[1] == "|":
            self.take()
            left = Or(left, self.and_())
        return left

    def and_(self):
        left = self.until()
        while self.peek()[1] == "&":
            self.take()
            left = And(left, self.until())
        return left

    def until(self):
        left = self.unary()
        if self.peek()[1] == "U":
            self.take()
            iv = self.interval()
            return Until(iv, left, self.until())
        return left

    def unary(self):
        tok = self.peek()
        if tok[1] == "!":
            self.take()
            return Not(self.unary())
        if tok[1] in ("F", "G"):
            self.take()
            iv = self.interval()
            arg = self.unary()
            return Eventually(iv, arg) if tok[1] == "F" else Always(iv, arg)
        return self.atom()

    def atom(self):
        tok = self.peek()
        if tok[1] == "true":
            self.take()
            return TRUE
        if tok[0] == "var":
            self.take()
            index = int(tok[1][1:])
            if index < 1:
                raise MtlSyntaxError("state variables are numbered from x1", tok[2])
            cmp_ = self.take(kind="cmp")[1]
            num = self.take(kind="num")
            return Predicate(index - 1, cmp_, float(num[1]))
        if tok[1] == "(":
            self.take()
            phi = self.or_()
            self.take(")")
            return phi
        raise MtlSyntaxError(f"unexpected {tok[1] or 'end of input'!r}", tok[2])

    def interval(self):
        tok = self.peek()
        if tok[1] not in ("[", "("):
            raise MtlSyntaxError("expected an interval", tok[2])
        self.take()
        lo = float(self.take(kind="num")[1])
        self.take(",")
        hi = float(self.take(kind="num")[1])
        close = self.peek()
        if close[1] not in ("]", ")"):
            raise MtlSyntaxError("expected ']' or ')'", close[2])
        self.take()
        try:
            return Interval(lo, hi, tok[1] == "[", close[1] == "]")
        except ValueError as exc:
            raise MtlSyntaxError(f"malformed interval: {exc}", tok[2]) from exc


def parse(text):
    """Parse formula text into a syntax tree."""
    return _Parser(text).parse()


def fmt_num(v):
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def _fmt_interval(iv):
    return ("[" if iv.lo_closed else "(") + f"{fmt_num(iv.lo)},{fmt_num(iv.hi)}" + (
        "]" if iv.hi_closed else ")")


def _operand(phi):
    text = to_text(phi)
    return f"({text})" if isinstance(phi, (And, Or, Until)) else text


def to_text(phi):
    """Canonical text of a formula; ``parse(to_text(phi)) == phi``."""
    if isinstance(phi, TrueF):
        return "true"
    if isinstance(phi, Predicate):
        return f"x{phi.index + 1} {phi.op} {fmt_num(phi.c)}"
    if isinstance(phi, Not):
        return f"!({to_text(phi.arg)})"
    if isinstance(phi, Eventually):
        return f"F{_fmt_interval(phi.interval)}({to_text(phi.arg)})"
    if isinstance(phi, Always):
        return f"G{_fmt_interval(phi.interval)}({to_text(phi.arg)})"
    if isinstance(phi, And):
        return f"{_operand(phi.left)} & {_operand(phi.right)}"
    if isinstance(phi, Or):
        return f"{_operand(phi.left)} | {_operand(phi.right)}"
    if isinstance(phi, Until):
        return f"{_operand(phi.left)} U{_fmt_interval(phi.interval)} {_operand(phi.right)}"
    if isinstance(phi, Formula):
        raise TypeError(f"unknown formula node {phi!r}")
    raise TypeError(f"not a formula: {phi!r}")
