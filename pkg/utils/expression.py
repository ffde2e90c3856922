"""
Arithmetic expression grammar for deterministic vertices and QoIs

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := unary ('^' factor)?
    unary  := '-'? atom
    atom   := number | ident | ident '(' args ')' | '(' expr ')'

'^' is right-associative. Evaluation is vectorised over numpy arrays.
"""

import re
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Mapping, Tuple, Union

import numpy as np

from utils.errors import ArityError, ParseError, UnknownFunction

Number = Union[float, np.ndarray]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)

# name -> (min args, max args or None, implementation)
FUNCTIONS = {
    "exp": (1, 1, np.exp),
    "log": (1, 1, np.log),
    "sqrt": (1, 1, np.sqrt),
    "abs": (1, 1, np.abs),
    "min": (2, None, lambda *args: _reduce(np.minimum, args)),
    "max": (2, None, lambda *args: _reduce(np.maximum, args)),
}


def _reduce(func, args):
    result = args[0]
    for arg in args[1:]:
        result = func(result, arg)
    return result


# ==================== AST ====================

@dataclass(frozen=True)
class Num:
    value: float

    def evaluate(self, env):
        return self.value


@dataclass(frozen=True)
class Var:
    name: str

    def evaluate(self, env):
        return env[self.name]


@dataclass(frozen=True)
class Neg:
    operand: object

    def evaluate(self, env):
        return -self.operand.evaluate(env)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object

    def evaluate(self, env):
        lhs = self.left.evaluate(env)
        rhs = self.right.evaluate(env)
        if self.op == "+":
            return lhs + rhs
        if self.op == "-":
            return lhs - rhs
        if self.op == "*":
            return lhs * rhs
        if self.op == "/":
            return np.divide(lhs, rhs)
        return np.power(lhs, rhs)


@dataclass(frozen=True)
class Call:
    name: str
    args: Tuple[object, ...]

    def evaluate(self, env):
        func = FUNCTIONS[self.name][2]
        return func(*(arg.evaluate(env) for arg in self.args))


def free_variables(node) -> FrozenSet[str]:
    if isinstance(node, Var):
        return frozenset([node.name])
    if isinstance(node, Neg):
        return free_variables(node.operand)
    if isinstance(node, BinOp):
        return free_variables(node.left) | free_variables(node.right)
    if isinstance(node, Call):
        names = frozenset()
        for arg in node.args:
            names |= free_variables(arg)
        return names
    return frozenset()


@dataclass(frozen=True)
class ExpressionAst:
    """Parsed expression together with its source text"""

    text: str
    root: object

    @property
    def variables(self) -> FrozenSet[str]:
        return free_variables(self.root)

    def evaluate(self, env: Mapping[str, Number]) -> Number:
        missing = self.variables - set(env)
        if missing:
            raise KeyError(f"Unbound variables: {sorted(missing)}")
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return self.root.evaluate(env)


# ==================== PARSER ====================

def tokenize(text: str) -> List[Tuple[str, str, int]]:
    """Split text into (kind, value, offset) tokens, ending with an 'end' token"""
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        match = _TOKEN_RE.match(text, pos)
        if not match or match.end() == pos:
            raise ParseError(f"Unexpected character {text[pos]!r} at offset {pos}", offset=pos)
        kind = match.lastgroup
        start = match.start(kind)
        tokens.append((kind, match.group(kind), start))
        pos = match.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.index = 0

    def peek(self):
        return self.tokens[self.index]

    def advance(self):
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, value: str):
        kind, got, offset = self.advance()
        if got != value or kind != "op":
            found = got if kind != "end" else "end of input"
            raise ParseError(f"Expected {value!r} at offset {offset}, found {found!r}", offset=offset)

    def parse(self):
        node = self.expr()
        kind, value, offset = self.peek()
        if kind != "end":
            raise ParseError(f"Unexpected {value!r} at offset {offset}", offset=offset)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.advance()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        base = self.unary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            return BinOp("^", base, self.factor())
        return base

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.advance()
            return Neg(self.atom())
        return self.atom()

    def atom(self):
        kind, value, offset = self.advance()
        if kind == "number":
            return Num(float(value))
        if kind == "ident":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                return self.call(value, offset)
            return Var(value)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = value if kind != "end" else "end of input"
        raise ParseError(f"Expected a number, name or '(' at offset {offset}, found {found!r}", offset=offset)

    def call(self, name: str, offset: int):
        if name not in FUNCTIONS:
            raise UnknownFunction(f"Unknown function {name!r} at offset {offset}", offset=offset)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[0] == "op" and self.peek()[1] == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        low, high, _ = FUNCTIONS[name]
        if len(args) < low or (high is not None and len(args) > high):
            expected = str(low) if high == low else f"at least {low}"
            raise ArityError(
                f"Function {name!r} takes {expected} argument(s), got {len(args)}",
                offset=offset,
            )
        return Call(name, tuple(args))


def parse_expression(text: str) -> ExpressionAst:
    """Parse text into an ExpressionAst (raises ParseError / UnknownFunction / ArityError)"""
    return ExpressionAst(text=text, root=_Parser(text).parse())


def evaluate_expression(text: str, env: Dict[str, Number]) -> Number:
    return parse_expression(text).evaluate(env)
