"""Scalar expressions over named variables: parsing, evaluation, derivatives.

Grammar (whitespace is ignored between tokens)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = ("-" | "+") unary | power ;
    power   = primary [ ("^" | "**") unary ] ;
    primary = number | name | func "(" expr ")" | "(" expr ")" ;
    func    = "sin" | "cos" | "exp" | "log" | "sqrt" | "tanh" ;
    number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ]
            | "." digits [ exponent ] ;

``^`` is right-associative and binds tighter than unary minus, so ``-x^2``
is ``-(x^2)`` and ``2^-x`` is ``2^(-x)``.  ``pi`` is a constant unless it is
declared as a variable.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")
_BINARY_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


class ParseError(ValueError):
    """Malformed expression text; ``offset`` is a byte offset into the source."""

    def __init__(self, message: str, src: str, index: int):
        self.offset = len(src[:index].encode("utf-8"))
        self.src = src
        super().__init__(f"{message} at offset {self.offset}")


class UnknownIdentifier(ParseError):
    pass


class ArityError(ParseError):
    pass


class DomainFault(ArithmeticError):
    def __init__(self, node: ScalarExpr, point, reason: str):
        self.node = node
        self.point = tuple(point)
        self.reason = reason
        super().__init__(f"{reason} in {to_text(node)!r} at {self.point}")


# -- AST ---------------------------------------------------------------------


class ScalarExpr:
    __slots__ = ()

    def children(self) -> tuple[ScalarExpr, ...]:
        return ()

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True, repr=False)
class Const(ScalarExpr):
    value: float

    def __repr__(self):
        return f"Const({self.value!r})"


@dataclass(frozen=True, repr=False)
class Var(ScalarExpr):
    index: int
    name: str = field(default="", compare=False)

    def __repr__(self):
        return f"Var({self.name or self.index})"


@dataclass(frozen=True, repr=False)
class Unary(ScalarExpr):
    op: str  # "neg" or a name from FUNCTIONS
    child: ScalarExpr

    def children(self):
        return (self.child,)

    def __repr__(self):
        return f"{self.op.capitalize()}({self.child!r})"


@dataclass(frozen=True, repr=False)
class Binary(ScalarExpr):
    op: str  # add | sub | mul | div | pow
    left: ScalarExpr
    right: ScalarExpr

    def children(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"{self.op.capitalize()}({self.left!r}, {self.right!r})"


ZERO = Const(0.0)
ONE = Const(1.0)


def _const(v: float) -> Const | None:
    return Const(float(v)) if math.isfinite(v) else None


def _is(e: ScalarExpr, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


# Smart constructors: constant folding and 0/1 identities only.

def add(a, b):
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return _const(a.value + b.value) or Binary("add", a, b)
    return Binary("add", a, b)


def sub(a, b):
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return _const(a.value - b.value) or Binary("sub", a, b)
    return Binary("sub", a, b)


def mul(a, b):
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return _const(a.value * b.value) or Binary("mul", a, b)
    return Binary("mul", a, b)


def div(a, b):
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return _const(a.value / b.value) or Binary("div", a, b)
    return Binary("div", a, b)


def pow_(a, b):
    if _is(b, 0.0):
        return ONE
    if _is(b, 1.0):
        return a
    return Binary("pow", a, b)


def neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.child
    return Unary("neg", a)


def call(fn: str, a):
    return Unary(fn, a)


# -- parsing -----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            bad = pos + len(src[pos:]) - len(src[pos:].lstrip())
            raise ParseError(f"unexpected character {src[bad]!r}", src, bad)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, names: Sequence[str]):
        self.src = src
        self.names = {n: i for i, n in enumerate(names)}
        self.tokens = _tokenize(src)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def error(self, msg, cls=ParseError, at=None):
        raise cls(msg, self.src, self.tok[2] if at is None else at)

    def take(self, text=None):
        kind, value, off = self.tok
        if text is not None and value != text:
            self.error(f"expected {text!r}" + (f", found {value!r}" if value else ", found end of input"))
        self.i += 1
        return kind, value, off

    def parse(self) -> ScalarExpr:
        e = self.expr()
        if self.tok[0] != "end":
            self.error(f"unexpected {self.tok[1]!r}")
        return e

    def expr(self):
        e = self.term()
        while self.tok[1] in ("+", "-"):
            op = "add" if self.take()[1] == "+" else "sub"
            e = Binary(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.tok[1] in ("*", "/"):
            op = "mul" if self.take()[1] == "*" else "div"
            e = Binary(op, e, self.unary())
        return e

    def unary(self):
        if self.tok[1] == "-":
            self.take()
            return Unary("neg", self.unary())
        if self.tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.primary()
        if self.tok[1] in ("^", "**"):
            self.take()
            return Binary("pow", base, self.unary())
        return base

    def primary(self):
        kind, value, off = self.tok
        if kind == "num":
            self.take()
            v = float(value)
            if not math.isfinite(v):
                self.error("number out of range", at=off)
            return Const(v)
        if kind == "name":
            self.take()
            if value in self.names:
                if self.tok[1] == "(":
                    self.error(f"{value!r} is a variable, not a function")
                return Var(self.names[value], value)
            if value in FUNCTIONS:
                self.take("(")
                if self.tok[1] == ")":
                    self.error(f"{value}() takes exactly 1 argument (0 given)", ArityError)
                arg = self.expr()
                if self.tok[1] == ",":
                    nargs = 1
                    while self.tok[1] == ",":
                        self.take()
                        self.expr()
                        nargs += 1
                    self.error(f"{value}() takes exactly 1 argument ({nargs} given)", ArityError, at=off)
                self.take(")")
                return Unary(value, arg)
            if value == "pi":
                return Const(math.pi)
            self.error(f"unknown identifier {value!r}", UnknownIdentifier, at=off)
        if value == "(":
            self.take()
            e = self.expr()
            self.take(")")
            return e
        if kind == "end":
            self.error("unexpected end of input")
        self.error(f"unexpected {value!r}")


def parse(src: str, names: Sequence[str]) -> ScalarExpr:
    if not src or not src.strip():
        raise ParseError("empty expression", src or "", 0)
    clash = [n for n in names if n in FUNCTIONS]
    if clash:
        raise ValueError(f"variable names shadow functions: {clash}")
    return _Parser(src, names).parse()


# -- printing ----------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _prec(e: ScalarExpr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary):
        return 3 if e.op == "neg" else 5
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 3
    return 5


def to_text(e: ScalarExpr) -> str:
    """Canonical text; ``parse(to_text(e))`` rebuilds ``e`` for parsed trees."""
    if isinstance(e, Const):
        v = e.value
        if math.copysign(1.0, v) < 0:
            return "-" + repr(-v)
        return repr(v)
    if isinstance(e, Var):
        return e.name or f"x{e.index + 1}"
    if isinstance(e, Unary):
        if e.op == "neg":
            c = to_text(e.child)
            return f"-({c})" if _prec(e.child) < 3 else f"-{c}"
        return f"{e.op}({to_text(e.child)})"
    p = _PREC[e.op]
    left, right = to_text(e.left), to_text(e.right)
    if e.op == "pow":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < 3:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {_BINARY_SYMBOL[e.op]} {right}"


# -- evaluation --------------------------------------------------------------

def _fpow(a: float, b: float) -> float:
    return math.pow(a, b)


_FUNC_IMPL = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "tanh": math.tanh,
}


def _fault_reason(e: ScalarExpr, args: Sequence[float]) -> str:
    op = e.op
    if op == "div":
        return "division by zero"
    if op == "log":
        return "log of non-positive value"
    if op == "sqrt":
        return "sqrt of negative value"
    if op == "pow":
        a, b = args
        if a == 0.0 and b < 0:
            return "zero raised to a negative power"
        if a < 0 and b != int(b):
            return "negative base with non-integer exponent"
    return "overflow"


def _walk(e: ScalarExpr, point, faults: list) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return point[e.index]
    if isinstance(e, Unary):
        a = _walk(e.child, point, faults)
        try:
            v = -a if e.op == "neg" else _FUNC_IMPL[e.op](a)
        except (ValueError, OverflowError, ZeroDivisionError):
            raise DomainFault(e, point, _fault_reason(e, (a,))) from None
    else:
        a = _walk(e.left, point, faults)
        b = _walk(e.right, point, faults)
        try:
            if e.op == "add":
                v = a + b
            elif e.op == "sub":
                v = a - b
            elif e.op == "mul":
                v = a * b
            elif e.op == "div":
                v = a / b
            else:
                v = _fpow(a, b)
        except (ValueError, OverflowError, ZeroDivisionError):
            raise DomainFault(e, point, _fault_reason(e, (a, b))) from None
    if not math.isfinite(v) and not faults:
        faults.append(e)
    return v


def evaluate(e: ScalarExpr, point: Sequence[float]) -> float:
    """Evaluate ``e`` at ``point`` in IEEE double.

    Undefined operations raise :class:`DomainFault`, and so does a non-finite
    result; the fault names the first node that produced a non-finite value.
    """
    point = [float(v) for v in point]
    faults: list = []
    v = _walk(e, point, faults)
    if not math.isfinite(v):
        raise DomainFault(faults[0] if faults else e, point, "non-finite value")
    return v


def compile_expr(e: ScalarExpr, dim: int | None = None) -> Callable[[Sequence[float]], float]:
    """Compile ``e`` to a Python function with the same results as :func:`evaluate`.

    The compiled function falls back to :func:`evaluate` to build the fault
    report, so both paths raise on exactly the same inputs.
    """
    nvars = 1 + max((v.index for v in iter_nodes(e) if isinstance(v, Var)), default=-1)
    if dim is not None and nvars > dim:
        raise ValueError(f"expression uses variable index {nvars - 1} >= dimension {dim}")
    consts: list[float] = []

    def emit(node) -> str:
        if isinstance(node, Const):
            consts.append(node.value)
            return f"_c[{len(consts) - 1}]"
        if isinstance(node, Var):
            return f"v{node.index}"
        if isinstance(node, Unary):
            if node.op == "neg":
                return f"(-{emit(node.child)})"
            return f"_{node.op}({emit(node.child)})"
        a, b = emit(node.left), emit(node.right)
        if node.op == "pow":
            return f"_pow({a}, {b})"
        return f"({a} {_BINARY_SYMBOL[node.op]} {b})"

    body = emit(e)
    # plain floats so that numpy scalars cannot turn a fault into inf
    unpack = "".join(f"    v{i} = float(p[{i}])\n" for i in range(nvars))
    src = (
        "def _compiled(p):\n"
        f"{unpack}"
        "    try:\n"
        f"        v = {body}\n"
        "    except (ValueError, OverflowError, ZeroDivisionError):\n"
        "        return _slow(p)\n"
        "    if v - v != 0.0:\n"
        "        return _slow(p)\n"
        "    return v\n"
    )
    env = {f"_{k}": f for k, f in _FUNC_IMPL.items()}
    env.update(_pow=_fpow, _c=tuple(consts), _slow=lambda p: evaluate(e, p))
    exec(compile(src, "<stab.symexpr>", "exec"), env)
    return env["_compiled"]


# -- structure ---------------------------------------------------------------

def iter_nodes(e: ScalarExpr):
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(node.children())


def depends_on(e: ScalarExpr, index: int) -> bool:
    return any(isinstance(n, Var) and n.index == index for n in iter_nodes(e))


def map_vars(e: ScalarExpr, fn: Callable[[Var], ScalarExpr]) -> ScalarExpr:
    if isinstance(e, Var):
        return fn(e)
    if isinstance(e, Unary):
        return Unary(e.op, map_vars(e.child, fn))
    if isinstance(e, Binary):
        return Binary(e.op, map_vars(e.left, fn), map_vars(e.right, fn))
    return e


# -- differentiation ---------------------------------------------------------

def differentiate(e: ScalarExpr, index: int) -> ScalarExpr:
    """Exact partial derivative with respect to variable ``index``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == index else ZERO
    if isinstance(e, Unary):
        a = e.child
        da = differentiate(a, index)
        if _is(da, 0.0):
            return ZERO
        op = e.op
        if op == "neg":
            return neg(da)
        if op == "sin":
            outer = call("cos", a)
        elif op == "cos":
            outer = neg(call("sin", a))
        elif op == "exp":
            outer = e
        elif op == "log":
            return div(da, a)
        elif op == "sqrt":
            return div(da, mul(Const(2.0), e))
        elif op == "tanh":
            outer = sub(ONE, pow_(e, Const(2.0)))
        else:
            raise ValueError(f"unknown function {op!r}")
        return mul(outer, da)

    a, b = e.left, e.right
    if e.op == "add":
        return add(differentiate(a, index), differentiate(b, index))
    if e.op == "sub":
        return sub(differentiate(a, index), differentiate(b, index))
    if e.op == "mul":
        return add(mul(differentiate(a, index), b), mul(a, differentiate(b, index)))
    if e.op == "div":
        da, db = differentiate(a, index), differentiate(b, index)
        return sub(div(da, b), div(mul(a, db), pow_(b, Const(2.0))))
    # pow
    da = differentiate(a, index)
    if not depends_on(b, index):
        if _is(da, 0.0):
            return ZERO
        lowered = Const(b.value - 1.0) if isinstance(b, Const) else sub(b, ONE)
        return mul(mul(b, pow_(a, lowered)), da)
    # a^b = exp(b*log(a))
    db = differentiate(b, index)
    inner = add(mul(db, call("log", a)), div(mul(b, da), a))
    return mul(e, inner)


@dataclass(frozen=True)
class VectorFieldExpr:
    names: tuple[str, ...]
    components: tuple[ScalarExpr, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.components) != len(self.names):
            raise ValueError(
                f"vector field needs {len(self.names)} components, got {len(self.components)}"
            )
        for c in self.components:
            for node in iter_nodes(c):
                if isinstance(node, Var) and node.index >= self.dim:
                    raise ValueError(f"variable index {node.index} out of range for dim {self.dim}")

    @property
    def dim(self) -> int:
        return len(self.names)

    @classmethod
    def parse(cls, sources: Sequence[str], names: Sequence[str]) -> VectorFieldExpr:
        return cls(tuple(names), tuple(parse(s, names) for s in sources))

    def evaluate(self, point) -> list[float]:
        return [evaluate(c, point) for c in self.components]

    def __str__(self):
        return "(" + ", ".join(to_text(c) for c in self.components) + ")"


def gradient(e: ScalarExpr, names: Sequence[str]) -> VectorFieldExpr:
    return VectorFieldExpr(tuple(names), tuple(differentiate(e, k) for k in range(len(names))))
