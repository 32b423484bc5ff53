"""Task specification language: predicates, specifications, parser and semantics.

Predicates are evaluated over states (numpy arrays whose last axis is the
state dimension). Every atom carries a quantitative value; its Boolean value
is ``quant > 0``. Specifications are built from ``achieve``, ``ensuring``,
sequencing (``;``) and choice (``or``).

Concrete syntax::

    spec    := choice
    choice  := seq { "or" seq }
    seq     := ens { ";" ens }          (right associative)
    ens     := base { "ensuring" pred }
    base    := [ "achieve" ] pred | "(" spec ")"
    pred    := term { "or" term }
    term    := factor { "and" factor }
    factor  := atom | "(" pred ")"
    atom    := ident "(" num { "," num } ")"

An ``or`` directly between achieve-predicates is a choice between
specifications; ``achieve (a or b)`` writes a disjunctive predicate. After
``ensuring`` the full predicate grammar applies.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Union

import numpy as np

__all__ = [
    "Atom", "Reach", "Near", "Avoid", "Custom", "TrueP", "TRUE", "And", "Or",
    "Predicate", "Achieve", "Ensuring", "Seq", "Choice", "Spec", "Trajectory",
    "SpecSyntaxError", "UnknownPredicateError", "AtomFactory", "rooms_atoms",
    "conj", "eval_quant", "eval_bool", "parse_spec", "pretty", "pretty_pred",
    "spec_size", "satisfies_spec", "predicate_table",
]


# ---------------------------------------------------------------------------
# Predicates


class Atom:
    """Base class for atomic predicates."""

    def quant(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dsl(self) -> str:
        raise NotImplementedError


def _fmt_num(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


@dataclass(frozen=True)
class Reach(Atom):
    """Positive within ``scale`` of ``center``: ``1 - |s - center| / scale``.

    ``label`` holds the DSL arguments (room row/column) used for printing.
    """

    center: tuple[float, float]
    scale: float
    label: tuple[float, ...]

    def quant(self, s):
        s = np.asarray(s, dtype=float)
        d = np.linalg.norm(s - np.asarray(self.center), axis=-1)
        return 1.0 - d / self.scale

    def dsl(self):
        return "reach(" + ",".join(_fmt_num(v) for v in self.label) + ")"


@dataclass(frozen=True)
class Near(Atom):
    """Point target ``near(x, y, radius)``; positive strictly inside the disc."""

    center: tuple[float, float]
    radius: float

    def quant(self, s):
        s = np.asarray(s, dtype=float)
        d = np.linalg.norm(s - np.asarray(self.center), axis=-1)
        return 1.0 - d / self.radius

    def dsl(self):
        x, y = self.center
        return f"near({_fmt_num(x)},{_fmt_num(y)},{_fmt_num(self.radius)})"


@dataclass(frozen=True)
class Avoid(Atom):
    """Positive outside a disc of radius ``radius``: ``(|s - center| - radius) / scale``."""

    center: tuple[float, float]
    radius: float
    scale: float
    label: tuple[float, ...]

    def quant(self, s):
        s = np.asarray(s, dtype=float)
        d = np.linalg.norm(s - np.asarray(self.center), axis=-1)
        return (d - self.radius) / self.scale

    def dsl(self):
        return "avoid(" + ",".join(_fmt_num(v) for v in self.label) + ")"


@dataclass(frozen=True)
class Custom(Atom):
    """User predicate with an arbitrary vectorised quantitative evaluator.

    Equality is by ``(name, args)``; the evaluator is excluded from comparison.
    """

    name: str
    args: tuple[float, ...]
    fn: Callable[[np.ndarray], np.ndarray] = field(compare=False, hash=False, repr=False)

    def quant(self, s):
        return np.asarray(self.fn(np.asarray(s, dtype=float)), dtype=float)

    def dsl(self):
        return f"{self.name}(" + ",".join(_fmt_num(v) for v in self.args) + ")"


@dataclass(frozen=True)
class TrueP(Atom):
    """Holds everywhere. Quantitative value is the constant 1."""

    def quant(self, s):
        s = np.asarray(s, dtype=float)
        return np.ones(s.shape[:-1])

    def dsl(self):
        return "true"


TRUE = TrueP()


@dataclass(frozen=True)
class And:
    left: "Predicate"
    right: "Predicate"


@dataclass(frozen=True)
class Or:
    left: "Predicate"
    right: "Predicate"


Predicate = Union[Atom, And, Or]


def conj(a: Predicate, b: Predicate) -> Predicate:
    """Conjunction that drops the trivially true operand."""
    if isinstance(a, TrueP):
        return b
    if isinstance(b, TrueP):
        return a
    return And(a, b)


def eval_quant(b: Predicate, s) -> np.ndarray | float:
    """Quantitative value of ``b`` at state(s) ``s`` (min for and, max for or)."""
    if isinstance(b, And):
        out = np.minimum(eval_quant(b.left, s), eval_quant(b.right, s))
    elif isinstance(b, Or):
        out = np.maximum(eval_quant(b.left, s), eval_quant(b.right, s))
    else:
        out = b.quant(s)
    if np.ndim(out) == 0:
        return float(out)
    return out


def eval_bool(b: Predicate, s):
    out = np.asarray(eval_quant(b, s)) > 0
    if out.ndim == 0:
        return bool(out)
    return out


# ---------------------------------------------------------------------------
# Specifications


@dataclass(frozen=True)
class Achieve:
    pred: Predicate


@dataclass(frozen=True)
class Ensuring:
    spec: "Spec"
    pred: Predicate


@dataclass(frozen=True)
class Seq:
    first: "Spec"
    second: "Spec"


@dataclass(frozen=True)
class Choice:
    left: "Spec"
    right: "Spec"


Spec = Union[Achieve, Ensuring, Seq, Choice]


def spec_size(phi: Spec) -> int:
    """Number of operators (achieve, ensuring, ;, or) in ``phi``."""
    if isinstance(phi, Achieve):
        return 1
    if isinstance(phi, Ensuring):
        return 1 + spec_size(phi.spec)
    if isinstance(phi, Seq):
        return 1 + spec_size(phi.first) + spec_size(phi.second)
    return 1 + spec_size(phi.left) + spec_size(phi.right)


@dataclass(frozen=True)
class Trajectory:
    """Finite state sequence ``s_0 .. s_t`` with the actions between them."""

    states: np.ndarray
    actions: np.ndarray | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[None, :]
        if len(states) == 0:
            raise ValueError("trajectory needs at least one state")
        object.__setattr__(self, "states", states)
        if self.actions is not None:
            actions = np.asarray(self.actions, dtype=float)
            if len(actions) != len(states) - 1:
                raise ValueError("need exactly len(states) - 1 actions")
            object.__setattr__(self, "actions", actions)

    def __len__(self):
        return len(self.states)

    @property
    def t(self) -> int:
        return len(self.states) - 1

    def sub(self, lo: int, hi: int) -> "Trajectory":
        """``zeta[lo:hi]`` with both endpoints included."""
        acts = None if self.actions is None else self.actions[lo:hi]
        return Trajectory(self.states[lo:hi + 1], acts)


def _as_states(zeta) -> np.ndarray:
    if isinstance(zeta, Trajectory):
        return zeta.states
    states = np.asarray(zeta, dtype=float)
    return states[None, :] if states.ndim == 1 else states


def predicate_table(states: np.ndarray, preds) -> dict:
    """Boolean value of each predicate at each state, keyed by predicate."""
    return {b: np.atleast_1d(np.asarray(eval_bool(b, states))) for b in preds}


def _spec_preds(phi: Spec, acc: set) -> set:
    if isinstance(phi, Achieve):
        acc.add(phi.pred)
    elif isinstance(phi, Ensuring):
        acc.add(phi.pred)
        _spec_preds(phi.spec, acc)
    elif isinstance(phi, Seq):
        _spec_preds(phi.first, acc)
        _spec_preds(phi.second, acc)
    else:
        _spec_preds(phi.left, acc)
        _spec_preds(phi.right, acc)
    return acc


def satisfies_spec(zeta, phi: Spec) -> bool:
    """Decide ``zeta |= phi`` for a finite trajectory.

    Memoised over (subspecification, start, end) so sequencing stays
    polynomial in the trajectory length.
    """
    states = _as_states(zeta)
    n = len(states)
    table = predicate_table(states, _spec_preds(phi, set()))
    # prefix counts give O(1) "exists" / "forall" over intervals
    counts = {b: np.concatenate([[0], np.cumsum(v)]) for b, v in table.items()}

    def any_in(b, i, j):
        c = counts[b]
        return c[j + 1] - c[i] > 0

    def all_in(b, i, j):
        c = counts[b]
        return c[j + 1] - c[i] == j - i + 1

    @lru_cache(maxsize=None)
    def sat(node_id: int, i: int, j: int) -> bool:
        node = nodes[node_id]
        if isinstance(node, Achieve):
            return any_in(node.pred, i, j)
        if isinstance(node, Ensuring):
            return all_in(node.pred, i, j) and sat(child[node_id][0], i, j)
        if isinstance(node, Seq):
            a, b = child[node_id]
            return any(sat(a, i, k) and sat(b, k + 1, j) for k in range(i, j))
        a, b = child[node_id]
        return sat(a, i, j) or sat(b, i, j)

    nodes: list = []
    child: dict = {}

    def index(node) -> int:
        nid = len(nodes)
        nodes.append(node)
        if isinstance(node, Ensuring):
            child[nid] = (index(node.spec),)
        elif isinstance(node, Seq):
            child[nid] = (index(node.first), index(node.second))
        elif isinstance(node, Choice):
            child[nid] = (index(node.left), index(node.right))
        return nid

    root = index(phi)
    return bool(sat(root, 0, n - 1))


# ---------------------------------------------------------------------------
# Atom factories


AtomFactory = Mapping[str, Callable[..., Atom]]


def rooms_atoms(room_side: float = 1.0, obstacle_radius: float | None = None) -> dict:
    """``reach``/``avoid`` over a grid of square rooms plus point ``near``.

    ``reach(r, c)`` and ``avoid(r, c)`` refer to the room in row ``r`` and
    column ``c`` (row 0 at the bottom). Distances are scaled by half the room
    side.
    """
    L = float(room_side)
    r_obs = 0.3 * L if obstacle_radius is None else float(obstacle_radius)
    half = L / 2.0

    def center(r, c):
        return ((c + 0.5) * L, (r + 0.5) * L)

    def reach(r, c):
        return Reach(center(r, c), half, (r, c))

    def avoid(r, c):
        return Avoid(center(r, c), r_obs, half, (r, c))

    def near(x, y, radius):
        return Near((float(x), float(y)), float(radius))

    return {"reach": reach, "avoid": avoid, "near": near}


# ---------------------------------------------------------------------------
# Parser


class SpecSyntaxError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{msg} at line {line}, column {col}")
        self.line = line
        self.col = col


class UnknownPredicateError(SpecSyntaxError):
    pass


_TOKEN = re.compile(
    r"(?P<ws>[ \t\r\n]+)|(?P<comment>#[^\n]*)"
    r"|(?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<punct>[(),;])"
)
_KEYWORDS = {"or", "and", "ensuring", "achieve"}


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise SpecSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind not in ("ws", "comment"):
            if kind == "ident" and chunk in _KEYWORDS:
                kind = chunk
            toks.append(_Tok(kind, chunk, line, pos - line_start + 1))
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str, atoms: AtomFactory):
        self.toks = _tokenize(text)
        self.i = 0
        self.atoms = atoms

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def accept(self, kind: str) -> bool:
        if self.tok.kind == kind or (self.tok.kind == "punct" and self.tok.text == kind):
            self.i += 1
            return True
        return False

    def expect(self, kind: str) -> _Tok:
        tok = self.tok
        if not self.accept(kind):
            shown = tok.text or "end of input"
            raise SpecSyntaxError(f"expected {kind!r}, found {shown!r}", tok.line, tok.col)
        return tok

    def fail(self, msg: str):
        raise SpecSyntaxError(msg, self.tok.line, self.tok.col)

    def parse(self) -> Spec:
        phi = self.choice()
        if self.tok.kind != "eof":
            self.fail(f"unexpected {self.tok.text!r}")
        return phi

    def choice(self) -> Spec:
        phi = self.seq()
        while self.accept("or"):
            phi = Choice(phi, self.seq())
        return phi

    def seq(self) -> Spec:
        first = self.ens()
        if self.accept(";"):
            return Seq(first, self.seq())
        return first

    def ens(self) -> Spec:
        phi = self.base()
        while self.accept("ensuring"):
            phi = Ensuring(phi, self.pred())
        return phi

    def base(self) -> Spec:
        if self.accept("achieve"):
            return Achieve(self.term())
        if self.tok.text == "(":
            mark = self.i
            try:
                self.i += 1
                phi = self.choice()
                self.expect(")")
            except SpecSyntaxError:
                phi = None
            # "(p or q) and r" is a predicate, not a parenthesised spec
            if phi is not None and self.tok.kind != "and":
                return phi
            self.i = mark
        return Achieve(self.term())

    def pred(self) -> Predicate:
        b = self.term()
        while self.accept("or"):
            b = Or(b, self.term())
        return b

    def term(self) -> Predicate:
        b = self.factor()
        while self.accept("and"):
            b = And(b, self.factor())
        return b

    def factor(self) -> Predicate:
        if self.accept("("):
            b = self.pred()
            self.expect(")")
            return b
        return self.atom()

    def atom(self) -> Atom:
        tok = self.tok
        if tok.kind != "ident":
            self.fail(f"expected predicate, found {tok.text or 'end of input'!r}")
        self.i += 1
        self.expect("(")
        args = [float(self.expect("num").text)]
        while self.accept(","):
            args.append(float(self.expect("num").text))
        self.expect(")")
        factory = self.atoms.get(tok.text)
        if factory is None:
            raise UnknownPredicateError(f"unknown predicate {tok.text!r}", tok.line, tok.col)
        args = [int(a) if a.is_integer() else a for a in args]
        try:
            return factory(*args)
        except TypeError as exc:
            raise SpecSyntaxError(f"bad arguments for {tok.text}: {exc}", tok.line, tok.col) from None


def parse_spec(text: str, atoms: AtomFactory | None = None) -> Spec:
    """Parse DSL text into a :data:`Spec`. ``atoms`` maps names to constructors."""
    return _Parser(text, rooms_atoms() if atoms is None else atoms).parse()


# ---------------------------------------------------------------------------
# Printer


def pretty_pred(b: Predicate) -> str:
    if isinstance(b, Or):
        right = pretty_pred(b.right)
        if isinstance(b.right, Or):
            right = f"({right})"
        return f"{pretty_pred(b.left)} or {right}"
    if isinstance(b, And):
        left, right = pretty_pred(b.left), pretty_pred(b.right)
        if isinstance(b.left, Or):
            left = f"({left})"
        if isinstance(b.right, (And, Or)):
            right = f"({right})"
        return f"{left} and {right}"
    return b.dsl()


def _pred_factor(b: Predicate) -> str:
    s = pretty_pred(b)
    return f"({s})" if isinstance(b, Or) else s


def _ends_with_ensuring(phi: Spec) -> bool:
    if isinstance(phi, Ensuring):
        return True
    if isinstance(phi, Seq):
        return not isinstance(phi.second, Choice) and _ends_with_ensuring(phi.second)
    if isinstance(phi, Choice):
        return not isinstance(phi.right, (Choice, Ensuring)) and _ends_with_ensuring(phi.right)
    return False


def pretty(phi: Spec) -> str:
    """Render ``phi`` as DSL text; ``parse_spec(pretty(phi)) == phi``."""
    if isinstance(phi, Achieve):
        if isinstance(phi.pred, Or):
            return f"achieve ({pretty_pred(phi.pred)})"
        return pretty_pred(phi.pred)
    if isinstance(phi, Ensuring):
        inner = pretty(phi.spec)
        if isinstance(phi.spec, (Seq, Choice)):
            inner = f"({inner})"
        return f"{inner} ensuring {_pred_factor(phi.pred)}"
    if isinstance(phi, Seq):
        first = pretty(phi.first)
        if isinstance(phi.first, (Seq, Choice)):
            first = f"({first})"
        second = pretty(phi.second)
        if isinstance(phi.second, Choice):
            second = f"({second})"
        return f"{first}; {second}"
    left, right = pretty(phi.left), pretty(phi.right)
    if _ends_with_ensuring(phi.left):
        # the ensuring predicate would otherwise swallow the "or"
        left = f"({left})"
    if isinstance(phi.right, (Choice, Ensuring)):
        right = f"({right})"
    return f"{left} or {right}"
