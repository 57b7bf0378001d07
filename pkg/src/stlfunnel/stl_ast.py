"""Formulas of the sequential STL fragment: atoms, AST, parser, flattening.

The fragment is

    psi   ::= true | mu | !mu | psi & psi
    phi   ::= G[a,b](psi) | F[a,b](psi)
    theta ::= phi & phi & ...                      (time-ordered conjunction)
            | F[c1,d1](psi1 & F[c2,d2](psi2 & ... phi_N))   (nested chain)

Concrete syntax uses named atoms declared separately (see :class:`PredicateAtom`).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import (
    FormulaSyntaxError,
    FragmentViolation,
    InvalidAtom,
    UnboundedWindowInSequence,
    UnknownAtom,
    WindowOrderViolation,
)

HALFSPACE = "halfspace"
INF_BALL = "inf_ball"


@dataclass(frozen=True)
class PredicateAtom:
    """A named concave predicate function ``h`` over the global state.

    halfspace: ``h(x) = scale * (offset - normal . x)``.
    inf_ball:  ``||x[selector] - center||_inf < radius``, i.e. the conjunction of
    ``2 * len(selector)`` halfspaces, each scaled by ``scale``.
    """

    name: str
    kind: str
    normal: tuple = ()
    offset: float = 0.0
    selector: tuple = ()
    center: tuple = ()
    radius: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in (HALFSPACE, INF_BALL):
            raise InvalidAtom(f"atom {self.name!r}: unknown kind {self.kind!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InvalidAtom(f"atom {self.name!r}: scale must be positive")
        if self.kind == HALFSPACE:
            if len(self.normal) == 0 or not any(v != 0 for v in self.normal):
                raise InvalidAtom(f"atom {self.name!r}: halfspace normal must be nonzero")
        else:
            if not self.radius > 0:
                raise InvalidAtom(f"atom {self.name!r}: radius must be positive")
            if len(self.selector) == 0 or len(set(self.selector)) != len(self.selector):
                raise InvalidAtom(f"atom {self.name!r}: selector indices must be distinct")
            if min(self.selector) < 0:
                raise InvalidAtom(f"atom {self.name!r}: negative selector index")
            if len(self.center) != len(self.selector):
                raise InvalidAtom(f"atom {self.name!r}: center and selector lengths differ")

    @classmethod
    def halfspace(cls, name, normal, offset, scale=1.0):
        return cls(name, HALFSPACE, normal=tuple(float(v) for v in normal),
                   offset=float(offset), scale=float(scale))

    @classmethod
    def inf_ball(cls, name, selector, center, radius, scale=1.0):
        return cls(name, INF_BALL, selector=tuple(int(i) for i in selector),
                   center=tuple(float(c) for c in center), radius=float(radius),
                   scale=float(scale))

    def check_dimension(self, n):
        if self.kind == HALFSPACE and len(self.normal) != n:
            raise InvalidAtom(f"atom {self.name!r}: normal has length {len(self.normal)}, state has {n}")
        if self.kind == INF_BALL and max(self.selector) >= n:
            raise InvalidAtom(f"atom {self.name!r}: selector index out of range for state dimension {n}")

    def halfspace_atoms(self, n):
        """Expand into plain halfspace atoms (identity for halfspaces)."""
        if self.kind == HALFSPACE:
            return [self]
        out = []
        for i, c in zip(self.selector, self.center):
            e = np.zeros(n)
            e[i] = 1.0
            # x_i - c < radius  and  c - x_i < radius
            out.append(PredicateAtom.halfspace(f"{self.name}[{i}+]", e, c + self.radius, self.scale))
            out.append(PredicateAtom.halfspace(f"{self.name}[{i}-]", -e, self.radius - c, self.scale))
        return out

    def value(self, x):
        """Exact value of h at state(s) ``x`` (last axis is the state)."""
        x = np.asarray(x, dtype=float)
        if self.kind == HALFSPACE:
            return self.scale * (self.offset - x @ np.asarray(self.normal))
        sel = x[..., list(self.selector)]
        dist = np.max(np.abs(sel - np.asarray(self.center)), axis=-1)
        return self.scale * (self.radius - dist)


# -- AST --------------------------------------------------------------------

@dataclass(frozen=True)
class TrueNode:
    def to_text(self):
        return "true"


@dataclass(frozen=True)
class Predicate:
    atom: PredicateAtom

    def to_text(self):
        return self.atom.name


@dataclass(frozen=True)
class NegPredicate:
    atom: PredicateAtom

    def to_text(self):
        return "!" + self.atom.name


@dataclass(frozen=True)
class And:
    children: tuple

    def __post_init__(self):
        if not self.children:
            raise FragmentViolation("conjunction needs at least one child")
        for c in self.children:
            if not is_nontemporal(c):
                raise FragmentViolation("conjunction children must be non-temporal")

    def to_text(self):
        return " & ".join(c.to_text() for c in self.children)


def _fmt_num(v):
    if math.isinf(v):
        return "inf"
    return repr(float(v)) if v != int(v) else str(int(v))


def _check_window(a, b):
    if not (0 <= a <= b) or math.isnan(a) or math.isnan(b) or math.isinf(a):
        raise FragmentViolation(f"time window [{a}, {b}] must satisfy 0 <= a <= b, a finite")


@dataclass(frozen=True)
class Always:
    a: float
    b: float
    child: object

    def __post_init__(self):
        _check_window(self.a, self.b)
        if not is_nontemporal(self.child):
            raise FragmentViolation("always operand must be non-temporal")

    def to_text(self):
        return f"G[{_fmt_num(self.a)},{_fmt_num(self.b)}]({self.child.to_text()})"


@dataclass(frozen=True)
class Eventually:
    a: float
    b: float
    child: object

    def __post_init__(self):
        _check_window(self.a, self.b)
        if not is_nontemporal(self.child):
            raise FragmentViolation("eventually operand must be non-temporal")

    def to_text(self):
        return f"F[{_fmt_num(self.a)},{_fmt_num(self.b)}]({self.child.to_text()})"


@dataclass(frozen=True)
class SeqConj:
    """Time-ordered conjunction of atomic temporal formulas."""

    children: tuple

    def __post_init__(self):
        if len(self.children) < 2:
            raise FragmentViolation("sequential conjunction needs at least two conjuncts")
        for c in self.children:
            if not isinstance(c, (Always, Eventually)):
                raise FragmentViolation("sequential conjuncts must be atomic temporal formulas")

    def to_text(self):
        return " & ".join(c.to_text() for c in self.children)


@dataclass(frozen=True)
class SeqNest:
    """``F[a1,b1](psi1 & F[a2,b2](psi2 & ... terminal))``."""

    steps: tuple  # of (a, b, psi)
    terminal: Union[Always, Eventually]

    def __post_init__(self):
        if not self.steps:
            raise FragmentViolation("nested sequence needs at least one step")
        for a, b, psi in self.steps:
            _check_window(a, b)
            if not is_nontemporal(psi):
                raise FragmentViolation("nested sequence step bodies must be non-temporal")
        if not isinstance(self.terminal, (Always, Eventually)):
            raise FragmentViolation("nested sequence must end in an atomic temporal formula")

    def to_text(self):
        text = self.terminal.to_text()
        for a, b, psi in reversed(self.steps):
            inner = text if isinstance(psi, TrueNode) else f"{psi.to_text()} & {text}"
            text = f"F[{_fmt_num(a)},{_fmt_num(b)}]({inner})"
        return text


FormulaNode = Union[TrueNode, Predicate, NegPredicate, And, Always, Eventually, SeqConj, SeqNest]


def is_nontemporal(node):
    return isinstance(node, (TrueNode, Predicate, NegPredicate, And))


def horizon(node):
    """Length of signal needed after the evaluation time."""
    if is_nontemporal(node):
        return 0.0
    if isinstance(node, (Always, Eventually)):
        return node.b
    if isinstance(node, SeqConj):
        return max(horizon(c) for c in node.children)
    if isinstance(node, SeqNest):
        return sum(b for _, b, _ in node.steps) + node.terminal.b
    raise TypeError(f"not a formula node: {node!r}")


def atoms_of(node):
    """All predicate atoms referenced by ``node``, in first-use order."""
    seen = {}

    def walk(n):
        if isinstance(n, (Predicate, NegPredicate)):
            seen.setdefault(n.atom.name, n.atom)
        elif isinstance(n, (And, SeqConj)):
            for c in n.children:
                walk(c)
        elif isinstance(n, (Always, Eventually)):
            walk(n.child)
        elif isinstance(n, SeqNest):
            for _, _, psi in n.steps:
                walk(psi)
            walk(n.terminal)

    walk(node)
    return list(seen.values())


# -- parser -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_.]*)"
    r"|(?P<sym>[\[\](),&!|~]))"
)


@dataclass
class _Token:
    kind: str  # num, ident, sym, end
    text: str
    pos: int


def _tokenize(text):
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), start))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, atoms):
        self.tokens = _tokenize(text)
        self.i = 0
        self.atoms = atoms

    @property
    def tok(self):
        return self.tokens[self.i]

    def peek(self, k=1):
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def expect(self, text):
        t = self.tok
        if t.text != text or t.kind == "end":
            raise FormulaSyntaxError(f"unexpected {t.text or 'end of input'!r}", t.pos, repr(text))
        self.i += 1
        return t

    def at_operator(self):
        t = self.tok
        return t.kind == "ident" and t.text in ("G", "F") and self.peek().text == "["

    def number(self):
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return float(t.text)
        if t.kind == "ident" and t.text == "inf":
            self.i += 1
            return math.inf
        raise FormulaSyntaxError(f"unexpected {t.text or 'end of input'!r}", t.pos, "number")

    def formula(self):
        items = self.items()
        t = self.tok
        if t.kind != "end":
            raise FormulaSyntaxError(f"unexpected {t.text!r}", t.pos, "'&' or end of input")
        temporals = [it for it in items if not is_nontemporal(it)]
        if not temporals:
            raise FragmentViolation("top-level formula must contain a temporal operator")
        if len(temporals) != len(items):
            raise FragmentViolation("non-temporal conjunct at top level; wrap it in G or F")
        if len(items) == 1:
            return items[0]
        for c in items:
            if isinstance(c, SeqNest):
                raise FragmentViolation("nested sequences cannot be conjoined with other formulas")
        return SeqConj(tuple(items))

    def items(self):
        items = [self.item()]
        while self.tok.text == "&":
            self.i += 1
            items.append(self.item())
        if self.tok.text in ("|",):
            raise FragmentViolation("disjunction is not part of the fragment")
        return items

    def item(self):
        t = self.tok
        if self.at_operator():
            return self.temporal()
        if t.text in ("!", "~"):
            self.i += 1
            nxt = self.tok
            if nxt.kind != "ident" or nxt.text == "true" or (
                nxt.text in ("G", "F", "U") and self.peek().text == "["
            ):
                raise FragmentViolation(f"negation applied to a non-predicate at position {nxt.pos}")
            self.i += 1
            return NegPredicate(self.lookup(nxt))
        if t.text == "(":
            raise FragmentViolation(f"parenthesised subformula at position {t.pos}; only G/F introduce parentheses")
        if t.kind == "ident":
            self.i += 1
            if self.tok.kind == "ident" and self.tok.text == "U":
                raise FragmentViolation("until operator is not part of the fragment")
            if t.text == "true":
                return TrueNode()
            return Predicate(self.lookup(t))
        raise FormulaSyntaxError(f"unexpected {t.text or 'end of input'!r}", t.pos, "atom, '!', 'G[' or 'F['")

    def lookup(self, tok):
        try:
            return self.atoms[tok.text]
        except KeyError:
            raise UnknownAtom(tok.text) from None

    def temporal(self):
        op = self.tok.text
        self.i += 1
        self.expect("[")
        a = self.number()
        self.expect(",")
        b = self.number()
        self.expect("]")
        self.expect("(")
        items = self.items()
        self.expect(")")
        temporals = [k for k, it in enumerate(items) if not is_nontemporal(it)]
        if not temporals:
            body = items[0] if len(items) == 1 else And(tuple(items))
            return Always(a, b, body) if op == "G" else Eventually(a, b, body)
        if len(temporals) > 1 or temporals[0] != len(items) - 1:
            raise FragmentViolation("a temporal operand may contain at most one nested temporal formula, as its last conjunct")
        if op == "G":
            raise FragmentViolation("always-operator cannot contain a nested temporal formula")
        tail = items[-1]
        lits = items[:-1]
        if isinstance(tail, SeqConj):
            raise FragmentViolation("nested conjunction of temporal formulas")
        psi = TrueNode() if not lits else (lits[0] if len(lits) == 1 else And(tuple(lits)))
        if isinstance(tail, SeqNest):
            return SeqNest(((a, b, psi),) + tail.steps, tail.terminal)
        return SeqNest(((a, b, psi),), tail)


def parse_formula(text: str, atoms: Mapping[str, PredicateAtom]) -> FormulaNode:
    """Parse a formula of the fragment; atoms are resolved by name."""
    return _Parser(text, atoms).formula()


# -- flattening -------------------------------------------------------------

ALWAYS = "always"
EVENTUALLY = "eventually"


@dataclass(frozen=True)
class SequenceKind:
    p: int  # 1: time-ordered conjunction, 0: nested chain
    N: int


@dataclass(frozen=True)
class AtomicTask:
    index: int
    kind: str
    window: tuple
    body: FormulaNode
    cumulative_window: tuple
    source_body: FormulaNode = field(default=None, compare=False)

    @property
    def m(self):
        return 1 if self.kind == ALWAYS else 0

    @property
    def lo(self):
        return self.window[0]

    @property
    def hi(self):
        return self.window[1]


def box_atoms(n, bound):
    """Halfspaces for ``||x||_inf < bound`` over an n-dimensional state."""
    out = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        out.append(PredicateAtom.halfspace(f"box[{i}+]", e, bound))
        out.append(PredicateAtom.halfspace(f"box[{i}-]", -e, bound))
    return out


def desugar(body, n):
    """Rewrite a non-temporal body so that only halfspace atoms remain."""
    if isinstance(body, TrueNode):
        return body
    if isinstance(body, Predicate):
        body.atom.check_dimension(n)
        parts = body.atom.halfspace_atoms(n)
        return Predicate(parts[0]) if len(parts) == 1 else And(tuple(Predicate(p) for p in parts))
    if isinstance(body, NegPredicate):
        body.atom.check_dimension(n)
        if body.atom.kind != HALFSPACE:
            raise FragmentViolation(f"negated {body.atom.kind} atom {body.atom.name!r} is not concave")
        return body
    if isinstance(body, And):
        return And(tuple(desugar(c, n) for c in body.children))
    raise FragmentViolation(f"expected a non-temporal body, got {type(body).__name__}")


def _prepare_body(body, n, box_bound):
    if n is None:
        return body
    out = desugar(body, n)
    if box_bound is not None:
        box = tuple(Predicate(a) for a in box_atoms(n, box_bound))
        parts = () if isinstance(out, TrueNode) else (out,)
        out = And(parts + box)
    return out


def _kind(node):
    return ALWAYS if isinstance(node, Always) else EVENTUALLY


def flatten_to_tasks(root, state_dim=None, box_bound=None):
    """Split a sequential formula into its ordered atomic tasks.

    With ``state_dim`` given, task bodies are desugared to halfspaces and, if
    ``box_bound`` is set, conjoined with the box ``||x||_inf < box_bound``.
    """
    if isinstance(root, (Always, Eventually)):
        body = _prepare_body(root.child, state_dim, box_bound)
        w = (root.a, root.b)
        return SequenceKind(1, 1), [AtomicTask(1, _kind(root), w, body, w, root.child)]
    if isinstance(root, SeqConj):
        kids = root.children
        for k, (prev, nxt) in enumerate(zip(kids, kids[1:]), start=1):
            if math.isinf(prev.b):
                raise UnboundedWindowInSequence(f"task {k} has an unbounded window but is followed by task {k + 1}")
            if prev.b > nxt.a:
                raise WindowOrderViolation(
                    f"task {k} ends at {prev.b} after task {k + 1} starts at {nxt.a}")
        tasks = [
            AtomicTask(q, _kind(c), (c.a, c.b), _prepare_body(c.child, state_dim, box_bound), (c.a, c.b), c.child)
            for q, c in enumerate(kids, start=1)
        ]
        return SequenceKind(1, len(tasks)), tasks
    if isinstance(root, SeqNest):
        tasks = []
        lo_sum = hi_sum = 0.0
        entries = [(a, b, psi, EVENTUALLY) for a, b, psi in root.steps]
        t = root.terminal
        entries.append((t.a, t.b, t.child, _kind(t)))
        for q, (a, b, psi, kind) in enumerate(entries, start=1):
            if math.isinf(b) and q < len(entries):
                raise UnboundedWindowInSequence(f"task {q} has an unbounded window inside a nested sequence")
            lo_sum += a
            hi_sum += b
            tasks.append(AtomicTask(q, kind, (a, b), _prepare_body(psi, state_dim, box_bound), (lo_sum, hi_sum), psi))
        return SequenceKind(0, len(tasks)), tasks
    raise FragmentViolation(f"cannot flatten a {type(root).__name__}; expected a temporal formula")


def count_temporal_operators(node):
    if isinstance(node, (Always, Eventually)):
        return 1
    if isinstance(node, SeqConj):
        return len(node.children)
    if isinstance(node, SeqNest):
        return len(node.steps) + 1
    return 0
