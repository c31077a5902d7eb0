"""The PQ query language: a small procedural language over one event.

PQ is indentation-insensitive; blocks are brace-delimited and statements
end at a newline or semicolon. A program is one or more function
definitions; the first function is the entry point and receives the event
record as its only parameter. ``emit(x)`` appends x to the run's output
sink. There are no closures, while-loops, or mutation of stored objects.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .errors import ParseError

KEYWORDS = {
    "def", "for", "in", "if", "elif", "else", "return", "emit",
    "and", "or", "not", "is", "true", "false", "none",
}

MATH_BUILTINS = ("sqrt", "cos", "sin", "cosh", "sinh", "exp", "log", "abs")


def _pos_field():
    return field(default=0, compare=False, repr=False)


@dataclass
class Node:
    pass


@dataclass
class Expr(Node):
    pass


@dataclass
class Name(Expr):
    id: str
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class Literal(Expr):
    value: object  # int, float, bool, or None
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class Attribute(Expr):
    base: Expr
    attr: str
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class Subscript(Expr):
    base: Expr
    index: Expr
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class Call(Expr):
    func: str
    args: list[Expr]
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class BinOp(Expr):
    op: str  # + - * / // % **
    left: Expr
    right: Expr
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class Compare(Expr):
    op: str  # == != < <= > >= is
    left: Expr
    right: Expr
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class BoolOp(Expr):
    op: str  # and | or
    left: Expr
    right: Expr
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class Not(Expr):
    operand: Expr
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class Neg(Expr):
    operand: Expr
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class TupleExpr(Expr):
    items: list[Expr]
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class Stmt(Node):
    pass


@dataclass
class Assign(Stmt):
    targets: list[str]  # >1 names means a tuple-unpacking target
    value: Expr
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class ForStmt(Stmt):
    targets: list[str]
    iterable: Expr
    body: list[Stmt]
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class IfStmt(Stmt):
    cond: Expr
    body: list[Stmt]
    orelse: list[Stmt]  # elif chains parse as a nested IfStmt here
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class ReturnStmt(Stmt):
    value: Optional[Expr]
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class EmitStmt(Stmt):
    value: Expr
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class ExprStmt(Stmt):
    value: Expr
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class FunctionDef(Node):
    name: str
    params: list[str]
    body: list[Stmt]
    line: int = _pos_field()
    col: int = _pos_field()


@dataclass
class Program(Node):
    """A parsed source file; the first function is the entry point."""

    functions: list[FunctionDef]

    @property
    def entry(self) -> FunctionDef:
        return self.functions[0]

    def function(self, name: str) -> FunctionDef | None:
        for f in self.functions:
            if f.name == name:
                return f
        return None


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_]\w*)
  | (?P<op>\*\*|//|==|!=|<=|>=|[-+*/%<>=(){}\[\],.;])
  | (?P<nl>\n)
  | (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<bad>.)
    """,
    re.VERBOSE,
)


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    depth = 0  # newlines inside ( ) and [ ] do not end statements
    for m in _TOKEN_RE.finditer(source):
        kind = m.lastgroup
        text = m.group()
        if kind == "bad":
            raise ParseError(f"unexpected character {text!r}", line, col)
        if kind == "nl":
            if depth == 0:
                tokens.append(Token("NEWLINE", "\n", line, col))
            line += 1
            col = 1
            continue
        if kind in ("ws", "comment"):
            col += len(text)
            continue
        if kind == "op":
            if text in "([":
                depth += 1
            elif text in ")]":
                depth = max(0, depth - 1)
            tokens.append(Token(text, text, line, col))
        elif kind == "name":
            tokens.append(Token("KW" if text in KEYWORDS else "NAME", text, line, col))
        else:
            tokens.append(Token("NUMBER", text, line, col))
        col += len(text)
    tokens.append(Token("EOF", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.i + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        if tok.kind != "EOF":
            self.i += 1
        return tok

    def at(self, kind: str, text: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def expect(self, kind: str, text: str | None = None) -> Token:
        if not self.at(kind, text):
            tok = self.peek()
            want = text or kind
            raise ParseError(f"expected {want!r}, found {tok.text or 'end of input'!r}", tok.line, tok.col)
        return self.next()

    def skip_newlines(self) -> None:
        while self.at("NEWLINE"):
            self.next()

    # ---- program structure ----

    def program(self) -> Program:
        funcs = []
        self.skip_newlines()
        while not self.at("EOF"):
            funcs.append(self.funcdef())
            self.skip_newlines()
        tok = self.peek()
        if not funcs:
            raise ParseError("empty program", tok.line, tok.col)
        return Program(funcs)

    def funcdef(self) -> FunctionDef:
        start = self.expect("KW", "def")
        name = self.expect("NAME").text
        self.expect("(")
        params = []
        if not self.at(")"):
            params.append(self.expect("NAME").text)
            while self.at(","):
                self.next()
                params.append(self.expect("NAME").text)
        self.expect(")")
        body = self.block()
        if len(set(params)) != len(params):
            raise ParseError(f"duplicate parameter in {name!r}", start.line, start.col)
        return FunctionDef(name, params, body, line=start.line, col=start.col)

    def block(self) -> list[Stmt]:
        self.skip_newlines()
        self.expect("{")
        stmts = []
        self.skip_newlines()
        while not self.at("}"):
            stmts.append(self.statement())
            if self.at(";") or self.at("NEWLINE"):
                self.next()
                self.skip_newlines()
            elif not self.at("}"):
                tok = self.peek()
                raise ParseError(f"expected end of statement, found {tok.text!r}", tok.line, tok.col)
        self.expect("}")
        return stmts

    # ---- statements ----

    def statement(self) -> Stmt:
        tok = self.peek()
        if tok.kind == "KW":
            if tok.text == "for":
                return self.for_stmt()
            if tok.text == "if":
                return self.if_stmt()
            if tok.text == "return":
                self.next()
                if self.at("NEWLINE") or self.at(";") or self.at("}"):
                    return ReturnStmt(None, line=tok.line, col=tok.col)
                return ReturnStmt(self.expression(), line=tok.line, col=tok.col)
            if tok.text == "emit":
                self.next()
                self.expect("(")
                value = self.expression()
                self.expect(")")
                return EmitStmt(value, line=tok.line, col=tok.col)
            if tok.text not in ("true", "false", "none", "not"):
                raise ParseError(f"unexpected keyword {tok.text!r}", tok.line, tok.col)
        assign = self.try_assignment()
        if assign is not None:
            return assign
        value = self.expression()
        return ExprStmt(value, line=tok.line, col=tok.col)

    def try_assignment(self) -> Assign | None:
        saved = self.i
        tok = self.peek()
        targets: list[str] = []
        parenthesized = False
        if self.at("("):
            self.next()
            parenthesized = True
        if not self.at("NAME"):
            self.i = saved
            return None
        targets.append(self.next().text)
        while self.at(","):
            self.next()
            if not self.at("NAME"):
                self.i = saved
                return None
            targets.append(self.next().text)
        if parenthesized:
            if len(targets) < 2 or not self.at(")"):
                self.i = saved
                return None
            self.next()
        if not self.at("="):
            self.i = saved
            return None
        eq = self.next()
        if self.at("NEWLINE") or self.at(";") or self.at("}") or self.at("EOF"):
            raise ParseError("expected an expression after '='", eq.line, eq.col + 1)
        value = self.expression()
        if len(set(targets)) != len(targets):
            raise ParseError("duplicate name in tuple target", tok.line, tok.col)
        return Assign(targets, value, line=tok.line, col=tok.col)

    def for_stmt(self) -> ForStmt:
        start = self.expect("KW", "for")
        targets = []
        if self.at("("):
            self.next()
            targets.append(self.expect("NAME").text)
            while self.at(","):
                self.next()
                targets.append(self.expect("NAME").text)
            self.expect(")")
        else:
            targets.append(self.expect("NAME").text)
            while self.at(","):
                self.next()
                targets.append(self.expect("NAME").text)
        self.expect("KW", "in")
        iterable = self.expression()
        body = self.block()
        return ForStmt(targets, iterable, body, line=start.line, col=start.col)

    def if_stmt(self) -> IfStmt:
        start = self.next()  # "if" or "elif"
        cond = self.expression()
        body = self.block()
        orelse: list[Stmt] = []
        save = self.i
        self.skip_newlines()
        if self.at("KW", "elif"):
            orelse = [self.if_stmt()]
        elif self.at("KW", "else"):
            self.next()
            orelse = self.block()
        else:
            self.i = save
        return IfStmt(cond, body, orelse, line=start.line, col=start.col)

    # ---- expressions, tightest binding last ----

    def expression(self) -> Expr:
        return self.or_expr()

    def or_expr(self) -> Expr:
        left = self.and_expr()
        while self.at("KW", "or"):
            tok = self.next()
            left = BoolOp("or", left, self.and_expr(), line=tok.line, col=tok.col)
        return left

    def and_expr(self) -> Expr:
        left = self.not_expr()
        while self.at("KW", "and"):
            tok = self.next()
            left = BoolOp("and", left, self.not_expr(), line=tok.line, col=tok.col)
        return left

    def not_expr(self) -> Expr:
        if self.at("KW", "not"):
            tok = self.next()
            return Not(self.not_expr(), line=tok.line, col=tok.col)
        return self.comparison()

    _COMP_OPS = ("==", "!=", "<=", ">=", "<", ">")

    def comparison(self) -> Expr:
        left = self.arith()
        op = None
        if self.peek().kind in self._COMP_OPS:
            op = self.next()
            opname = op.text
        elif self.at("KW", "is"):
            op = self.next()
            opname = "is"
        if op is None:
            return left
        right = self.arith()
        nxt = self.peek()
        if nxt.kind in self._COMP_OPS or (nxt.kind == "KW" and nxt.text == "is"):
            raise ParseError("comparison chains are not supported", nxt.line, nxt.col)
        return Compare(opname, left, right, line=op.line, col=op.col)

    def arith(self) -> Expr:
        left = self.term()
        while self.peek().kind in ("+", "-"):
            tok = self.next()
            left = BinOp(tok.text, left, self.term(), line=tok.line, col=tok.col)
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.peek().kind in ("*", "/", "//", "%"):
            tok = self.next()
            left = BinOp(tok.text, left, self.factor(), line=tok.line, col=tok.col)
        return left

    def factor(self) -> Expr:
        if self.at("-"):
            tok = self.next()
            return Neg(self.factor(), line=tok.line, col=tok.col)
        return self.power()

    def power(self) -> Expr:
        base = self.postfix()
        if self.at("**"):
            tok = self.next()
            return BinOp("**", base, self.factor(), line=tok.line, col=tok.col)
        return base

    def postfix(self) -> Expr:
        expr = self.atom()
        while True:
            if self.at("."):
                tok = self.next()
                attr = self.expect("NAME").text
                expr = Attribute(expr, attr, line=tok.line, col=tok.col)
            elif self.at("["):
                tok = self.next()
                index = self.expression()
                self.expect("]")
                expr = Subscript(expr, index, line=tok.line, col=tok.col)
            elif self.at("("):
                if not isinstance(expr, Name):
                    tok = self.peek()
                    raise ParseError("only named functions can be called", tok.line, tok.col)
                self.next()
                args = []
                if not self.at(")"):
                    args.append(self.expression())
                    while self.at(","):
                        self.next()
                        args.append(self.expression())
                self.expect(")")
                expr = Call(expr.id, args, line=expr.line, col=expr.col)
            else:
                return expr

    def atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.next()
            text = tok.text
            if "." in text or "e" in text or "E" in text:
                return Literal(float(text), line=tok.line, col=tok.col)
            return Literal(int(text), line=tok.line, col=tok.col)
        if tok.kind == "KW" and tok.text in ("true", "false", "none"):
            self.next()
            value = {"true": True, "false": False, "none": None}[tok.text]
            return Literal(value, line=tok.line, col=tok.col)
        if tok.kind == "NAME":
            self.next()
            return Name(tok.text, line=tok.line, col=tok.col)
        if tok.kind == "(":
            self.next()
            first = self.expression()
            if self.at(","):
                items = [first]
                while self.at(","):
                    self.next()
                    items.append(self.expression())
                self.expect(")")
                return TupleExpr(items, line=tok.line, col=tok.col)
            self.expect(")")
            return first
        raise ParseError(f"expected an expression, found {tok.text or 'end of input'!r}", tok.line, tok.col)


def parse(source: str) -> Program:
    """Parse PQ source text. Raises ParseError with a position on bad input."""
    return _Parser(tokenize(source)).program()


def parse_expression(source: str) -> Expr:
    """Parse a single expression (used by tests and tooling)."""
    p = _Parser(tokenize(source))
    expr = p.expression()
    p.skip_newlines()
    if not p.at("EOF"):
        tok = p.peek()
        raise ParseError(f"trailing input {tok.text!r}", tok.line, tok.col)
    return expr


def render(node: Node | list[Stmt], indent: int = 0) -> str:
    """Canonical text form; parse(render(x)) reproduces x exactly.

    Expressions come back fully parenthesized so no precedence knowledge is
    needed to re-read them.
    """
    pad = "  " * indent
    if isinstance(node, Program):
        return "\n".join(render(f) for f in node.functions)
    if isinstance(node, FunctionDef):
        head = f"{pad}def {node.name}({', '.join(node.params)}) {{\n"
        return head + render(node.body, indent + 1) + f"\n{pad}}}\n"
    if isinstance(node, list):
        return "\n".join(render(s, indent) for s in node)
    if isinstance(node, Assign):
        tgt = ", ".join(node.targets)
        return f"{pad}{tgt} = {render_expr(node.value)}"
    if isinstance(node, ForStmt):
        tgt = ", ".join(node.targets)
        head = f"{pad}for {tgt} in {render_expr(node.iterable)} {{\n"
        return head + render(node.body, indent + 1) + f"\n{pad}}}"
    if isinstance(node, IfStmt):
        out = f"{pad}if {render_expr(node.cond)} {{\n" + render(node.body, indent + 1) + f"\n{pad}}}"
        if node.orelse:
            out += f" else {{\n" + render(node.orelse, indent + 1) + f"\n{pad}}}"
        return out
    if isinstance(node, ReturnStmt):
        if node.value is None:
            return f"{pad}return"
        return f"{pad}return {render_expr(node.value)}"
    if isinstance(node, EmitStmt):
        return f"{pad}emit({render_expr(node.value)})"
    if isinstance(node, ExprStmt):
        return f"{pad}{render_expr(node.value)}"
    raise TypeError(f"cannot render {node!r}")


def render_expr(e: Expr) -> str:
    if isinstance(e, Name):
        return e.id
    if isinstance(e, Literal):
        if e.value is None:
            return "none"
        if e.value is True:
            return "true"
        if e.value is False:
            return "false"
        return repr(e.value)
    if isinstance(e, Attribute):
        base = render_expr(e.base)
        if isinstance(e.base, Literal):
            base = f"({base})"  # keep "57.b" from lexing as the float "57."
        return f"{base}.{e.attr}"
    if isinstance(e, Subscript):
        return f"{render_expr(e.base)}[{render_expr(e.index)}]"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(render_expr(a) for a in e.args)})"
    if isinstance(e, BinOp):
        return f"({render_expr(e.left)} {e.op} {render_expr(e.right)})"
    if isinstance(e, Compare):
        return f"({render_expr(e.left)} {e.op} {render_expr(e.right)})"
    if isinstance(e, BoolOp):
        return f"({render_expr(e.left)} {e.op} {render_expr(e.right)})"
    if isinstance(e, Not):
        return f"(not {render_expr(e.operand)})"
    if isinstance(e, Neg):
        return f"(-{render_expr(e.operand)})"
    if isinstance(e, TupleExpr):
        return "(" + ", ".join(render_expr(x) for x in e.items) + ")"
    raise TypeError(f"cannot render {e!r}")
