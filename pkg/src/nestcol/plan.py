"""Executable query plans over flat arrays.

A compiled query is a tree of these nodes. It contains integer arithmetic,
array element reads, loops over offset ranges, scalar operations, and tag
branches; object-level constructs (attributes, object subscripts, names of
stored values) do not exist here. Plans are immutable once built and can
be executed concurrently; all run state lives in the per-run context.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field as dc_field
from typing import Any, Callable, Iterator

from .errors import QueryRuntimeError, RangeError
from .schema import RoleKind, Schema

RETURN = object()  # statement-run sentinel: (RETURN, value) unwinds to the call


class Ctx:
    """Per-run state: column views, the slot frame, and the output sink."""

    __slots__ = ("cols", "frame", "sink")

    def __init__(self, cols: dict[str, Any], frame: list, sink: list):
        self.cols = cols
        self.frame = frame
        self.sink = sink


class PlanNode:
    __slots__ = ()
    _fields: tuple[str, ...] = ()

    def children(self) -> Iterator["PlanNode"]:
        for name in self._fields:
            val = getattr(self, name)
            if isinstance(val, PlanNode):
                yield val
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, PlanNode):
                        yield item
            elif isinstance(val, dict):
                for item in val.values():
                    if isinstance(item, PlanNode):
                        yield item
                    elif isinstance(item, (list, tuple)):
                        for sub in item:
                            if isinstance(sub, PlanNode):
                                yield sub


def walk(node: PlanNode) -> Iterator[PlanNode]:
    yield node
    for child in node.children():
        yield from walk(child)


def same(a: PlanNode, b: PlanNode) -> bool:
    """Structural equality of plan fragments."""
    if type(a) is not type(b):
        return False
    for name in a._fields + a._atoms:
        va, vb = getattr(a, name), getattr(b, name)
        if isinstance(va, PlanNode):
            if not isinstance(vb, PlanNode) or not same(va, vb):
                return False
        elif va != vb:
            return False
    return True


# ---------------------------------------------------------------- expressions


class Expr(PlanNode):
    __slots__ = ()
    _atoms: tuple[str, ...] = ()

    def eval(self, ctx: Ctx):
        raise NotImplementedError


class Const(Expr):
    __slots__ = ("value",)
    _atoms = ("value",)

    def __init__(self, value):
        self.value = value

    def eval(self, ctx):
        return self.value


class SlotRef(Expr):
    __slots__ = ("slot",)
    _atoms = ("slot",)

    def __init__(self, slot: int):
        self.slot = slot

    def eval(self, ctx):
        return ctx.frame[self.slot]


class ArrayRead(Expr):
    """Unchecked element read; out-of-range behavior is the host's."""

    __slots__ = ("column", "index")
    _fields = ("index",)
    _atoms = ("column",)

    def __init__(self, column: str, index: Expr):
        self.column = column
        self.index = index

    def eval(self, ctx):
        return ctx.cols[self.column][self.index.eval(ctx)]


class CheckedArrayRead(Expr):
    """Element read that raises RangeError instead of reading out of range."""

    __slots__ = ("column", "index")
    _fields = ("index",)
    _atoms = ("column",)

    def __init__(self, column: str, index: Expr):
        self.column = column
        self.index = index

    def eval(self, ctx):
        i = self.index.eval(ctx)
        col = ctx.cols[self.column]
        if 0 <= i < len(col):
            return col[i]
        raise RangeError(f"read of {self.column}[{i}] outside [0, {len(col)})")


BIN_OPS: dict[str, Callable] = {
    "+": operator.add,
    "-": operator.sub,
    "*": operator.mul,
    "/": operator.truediv,
    "//": operator.floordiv,
    "%": operator.mod,
    "**": operator.pow,
}

CMP_OPS: dict[str, Callable] = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


class Arith(Expr):
    __slots__ = ("op", "fn", "left", "right")
    _fields = ("left", "right")
    _atoms = ("op",)

    def __init__(self, op: str, left: Expr, right: Expr):
        self.op = op
        self.fn = BIN_OPS[op]
        self.left = left
        self.right = right

    def eval(self, ctx):
        return self.fn(self.left.eval(ctx), self.right.eval(ctx))


class CompareOp(Expr):
    __slots__ = ("op", "fn", "left", "right")
    _fields = ("left", "right")
    _atoms = ("op",)

    def __init__(self, op: str, left: Expr, right: Expr):
        self.op = op
        self.fn = CMP_OPS[op]
        self.left = left
        self.right = right

    def eval(self, ctx):
        return self.fn(self.left.eval(ctx), self.right.eval(ctx))


class AndOp(Expr):
    __slots__ = ("left", "right")
    _fields = ("left", "right")

    def eval(self, ctx):
        if not self.left.eval(ctx):
            return False
        return bool(self.right.eval(ctx))

    def __init__(self, left: Expr, right: Expr):
        self.left = left
        self.right = right


class OrOp(Expr):
    __slots__ = ("left", "right")
    _fields = ("left", "right")

    def __init__(self, left: Expr, right: Expr):
        self.left = left
        self.right = right

    def eval(self, ctx):
        if self.left.eval(ctx):
            return True
        return bool(self.right.eval(ctx))


class NotOp(Expr):
    __slots__ = ("operand",)
    _fields = ("operand",)

    def __init__(self, operand: Expr):
        self.operand = operand

    def eval(self, ctx):
        return not self.operand.eval(ctx)


class NegOp(Expr):
    __slots__ = ("operand",)
    _fields = ("operand",)

    def __init__(self, operand: Expr):
        self.operand = operand

    def eval(self, ctx):
        return -self.operand.eval(ctx)


MATH_FNS: dict[str, Callable] = {
    "sqrt": math.sqrt,
    "cos": math.cos,
    "sin": math.sin,
    "cosh": math.cosh,
    "sinh": math.sinh,
    "exp": math.exp,
    "log": math.log,
    "abs": abs,
}


class MathCall(Expr):
    __slots__ = ("name", "fn", "arg")
    _fields = ("arg",)
    _atoms = ("name",)

    def __init__(self, name: str, arg: Expr):
        self.name = name
        self.fn = MATH_FNS[name]
        self.arg = arg

    def eval(self, ctx):
        return self.fn(self.arg.eval(ctx))


class ListLen(Expr):
    """Length of the list whose ordinal is ``index``: off[i+1] - off[i]."""

    __slots__ = ("offset_column", "index", "checked")
    _fields = ("index",)
    _atoms = ("offset_column", "checked")

    def __init__(self, offset_column: str, index: Expr, checked: bool):
        self.offset_column = offset_column
        self.index = index
        self.checked = checked

    def eval(self, ctx):
        i = self.index.eval(ctx)
        col = ctx.cols[self.offset_column]
        if self.checked and not 0 <= i < len(col) - 1:
            raise RangeError(f"read of {self.offset_column}[{i}] outside [0, {len(col) - 1})")
        return col[i + 1] - col[i]


class PyIndex(Expr):
    """Map a negative index to length + index before any range check."""

    __slots__ = ("index", "length")
    _fields = ("index", "length")

    def __init__(self, index: Expr, length: Expr):
        self.index = index
        self.length = length

    def eval(self, ctx):
        i = self.index.eval(ctx)
        if i < 0:
            i += self.length.eval(ctx)
        return i


class BoundsCheck(Expr):
    """Pass the value through iff lo <= value < hi, else RangeError."""

    __slots__ = ("value", "lo", "hi")
    _fields = ("value", "lo", "hi")

    def __init__(self, value: Expr, lo: Expr, hi: Expr):
        self.value = value
        self.lo = lo
        self.hi = hi

    def eval(self, ctx):
        v = self.value.eval(ctx)
        if self.lo.eval(ctx) <= v < self.hi.eval(ctx):
            return v
        raise RangeError(f"index {v} failed its range check")


class BranchExpr(Expr):
    """Pick a sub-expression by the runtime tag of a union instance."""

    __slots__ = ("tag_column", "index", "arms")
    _fields = ("index", "arms")
    _atoms = ("tag_column",)

    def __init__(self, tag_column: str, index: Expr, arms: dict[int, Expr]):
        self.tag_column = tag_column
        self.index = index
        self.arms = arms

    def eval(self, ctx):
        tag = ctx.cols[self.tag_column][self.index.eval(ctx)]
        arm = self.arms.get(tag)
        if arm is None:
            raise QueryRuntimeError(
                f"tag {tag} of {self.tag_column} reached a scope its type guards exclude"
            )
        return arm.eval(ctx)


class TupleMake(Expr):
    __slots__ = ("items",)
    _fields = ("items",)

    def __init__(self, items: tuple[Expr, ...]):
        self.items = items

    def eval(self, ctx):
        return tuple(item.eval(ctx) for item in self.items)


class TupleItem(Expr):
    """Project one element out of a runtime tuple (function return values)."""

    __slots__ = ("base", "item")
    _fields = ("base",)
    _atoms = ("item",)

    def __init__(self, base: Expr, item: int):
        self.base = base
        self.item = item

    def eval(self, ctx):
        return self.base.eval(ctx)[self.item]


class CallUser(Expr):
    """Run a specialized user function: bind argument slots, walk its body."""

    __slots__ = ("function", "args", "slots")
    _fields = ("args",)
    _atoms = ()

    def __init__(self, function: "PlanFunction", args: tuple[Expr, ...], slots: tuple[int, ...]):
        self.function = function
        self.args = args
        self.slots = slots

    def eval(self, ctx):
        frame = ctx.frame
        for slot, arg in zip(self.slots, self.args):
            frame[slot] = arg.eval(ctx)
        for stmt in self.function.body:
            r = stmt.run(ctx)
            if r is not None:
                return r[1]
        return None


# ----------------------------------------------------------------- statements


class Stmt(PlanNode):
    __slots__ = ()
    _atoms: tuple[str, ...] = ()

    def run(self, ctx: Ctx):
        raise NotImplementedError


class AssignSlot(Stmt):
    __slots__ = ("slot", "value")
    _fields = ("value",)
    _atoms = ("slot",)

    def __init__(self, slot: int, value: Expr):
        self.slot = slot
        self.value = value

    def run(self, ctx):
        ctx.frame[self.slot] = self.value.eval(ctx)
        return None


class EmitOp(Stmt):
    __slots__ = ("value",)
    _fields = ("value",)

    def __init__(self, value: Expr):
        self.value = value

    def run(self, ctx):
        ctx.sink.append(self.value.eval(ctx))
        return None


class ExprOp(Stmt):
    __slots__ = ("value",)
    _fields = ("value",)

    def __init__(self, value: Expr):
        self.value = value

    def run(self, ctx):
        self.value.eval(ctx)
        return None


class IfOp(Stmt):
    __slots__ = ("cond", "body", "orelse")
    _fields = ("cond", "body", "orelse")

    def __init__(self, cond: Expr, body: list[Stmt], orelse: list[Stmt]):
        self.cond = cond
        self.body = body
        self.orelse = orelse

    def run(self, ctx):
        branch = self.body if self.cond.eval(ctx) else self.orelse
        for stmt in branch:
            r = stmt.run(ctx)
            if r is not None:
                return r
        return None


class RangeLoop(Stmt):
    """for slot in [lo, hi): run body. Returns unwind through the loop."""

    __slots__ = ("slot", "lo", "hi", "body")
    _fields = ("lo", "hi", "body")
    _atoms = ("slot",)

    def __init__(self, slot: int, lo: Expr, hi: Expr, body: list[Stmt]):
        self.slot = slot
        self.lo = lo
        self.hi = hi
        self.body = body

    def run(self, ctx):
        frame = ctx.frame
        slot = self.slot
        body = self.body
        for i in range(self.lo.eval(ctx), self.hi.eval(ctx)):
            frame[slot] = i
            for stmt in body:
                r = stmt.run(ctx)
                if r is not None:
                    return r
        return None


class EventLoop(Stmt):
    """The outermost loop. A return inside only ends the current iteration."""

    __slots__ = ("slot", "lo", "hi", "body")
    _fields = ("lo", "hi", "body")
    _atoms = ("slot",)

    def __init__(self, slot: int, lo: Expr, hi: Expr, body: list[Stmt]):
        self.slot = slot
        self.lo = lo
        self.hi = hi
        self.body = body

    def run(self, ctx):
        self.run_range(ctx, self.lo.eval(ctx), self.hi.eval(ctx))
        return None

    def run_range(self, ctx, lo: int, hi: int):
        frame = ctx.frame
        slot = self.slot
        body = self.body
        for i in range(lo, hi):
            frame[slot] = i
            for stmt in body:
                if stmt.run(ctx) is not None:
                    break


class ReturnOp(Stmt):
    __slots__ = ("value",)
    _fields = ("value",)

    def __init__(self, value: Expr | None):
        self.value = value

    def run(self, ctx):
        return (RETURN, None if self.value is None else self.value.eval(ctx))


class BranchStmt(Stmt):
    """Run the statement list selected by the runtime tag of a union."""

    __slots__ = ("tag_column", "index", "arms")
    _fields = ("index", "arms")
    _atoms = ("tag_column",)

    def __init__(self, tag_column: str, index: Expr, arms: dict[int, list[Stmt]]):
        self.tag_column = tag_column
        self.index = index
        self.arms = arms

    def run(self, ctx):
        tag = ctx.cols[self.tag_column][self.index.eval(ctx)]
        arm = self.arms.get(tag)
        if arm is None:
            raise QueryRuntimeError(
                f"tag {tag} of {self.tag_column} reached a scope its type guards exclude"
            )
        for stmt in arm:
            r = stmt.run(ctx)
            if r is not None:
                return r
        return None


@dataclass
class PlanFunction:
    """One specialization of a user function for one argument signature."""

    name: str
    signature: tuple
    param_slots: tuple[int, ...]
    body: list[Stmt] = dc_field(default_factory=list)
    returns: tuple = ("none",)

    def describe_signature(self) -> str:
        return f"{self.name}{self.signature!r}"


@dataclass
class TypedPlan:
    """A compiled query: top statements plus everything needed to run them.

    ``body`` is normally a single EventLoop over the event ordinal; loop
    flattening may collapse it into a loop over inner data, after which
    per-event subranges are no longer addressable (event_granular False).
    """

    query_name: str
    prefix: str
    dataset_schema: Schema
    body: list[Stmt]
    n_slots: int
    slot_names: dict[int, str]
    referenced_columns: frozenset[str]
    column_roles: dict[str, RoleKind]
    functions: list[PlanFunction]
    options: "object"
    event_slot: int = 0
    event_granular: bool = True

    def event_loop(self) -> EventLoop | None:
        if len(self.body) == 1 and isinstance(self.body[0], EventLoop):
            return self.body[0]
        return None

    def node_count(self, node_type=None) -> int:
        n = 0
        for top in list(self.body) + [s for f in self.functions for s in f.body]:
            for node in walk(top):
                if node_type is None or isinstance(node, node_type):
                    n += 1
        return n


def collect_columns(stmts: list[Stmt]) -> set[str]:
    """Every column the given plan fragment can read."""
    referenced: set[str] = set()
    for top in stmts:
        for node in walk(top):
            if isinstance(node, (ArrayRead, CheckedArrayRead)):
                referenced.add(node.column)
            elif isinstance(node, ListLen):
                referenced.add(node.offset_column)
            elif isinstance(node, (BranchExpr, BranchStmt)):
                referenced.add(node.tag_column)
    return referenced


# ------------------------------------------------------------------ rendering


def render_expr(e: Expr, slot_names: dict[int, str]) -> str:
    sn = slot_names

    def r(x: Expr) -> str:
        if isinstance(x, Const):
            return repr(x.value)
        if isinstance(x, SlotRef):
            return sn.get(x.slot, f"slot{x.slot}")
        if isinstance(x, ArrayRead):
            return f"read({x.column}, {r(x.index)})"
        if isinstance(x, CheckedArrayRead):
            return f"read!({x.column}, {r(x.index)})"
        if isinstance(x, Arith):
            return f"({r(x.left)} {x.op} {r(x.right)})"
        if isinstance(x, CompareOp):
            return f"({r(x.left)} {x.op} {r(x.right)})"
        if isinstance(x, AndOp):
            return f"({r(x.left)} and {r(x.right)})"
        if isinstance(x, OrOp):
            return f"({r(x.left)} or {r(x.right)})"
        if isinstance(x, NotOp):
            return f"(not {r(x.operand)})"
        if isinstance(x, NegOp):
            return f"(-{r(x.operand)})"
        if isinstance(x, MathCall):
            return f"{x.name}({r(x.arg)})"
        if isinstance(x, ListLen):
            bang = "!" if x.checked else ""
            return f"len{bang}({x.offset_column} @ {r(x.index)})"
        if isinstance(x, PyIndex):
            return f"wrapneg({r(x.index)}, {r(x.length)})"
        if isinstance(x, BoundsCheck):
            return f"check({r(x.value)} in [{r(x.lo)}, {r(x.hi)}))"
        if isinstance(x, BranchExpr):
            arms = ", ".join(f"{t}: {r(a)}" for t, a in sorted(x.arms.items()))
            return f"branch({x.tag_column} @ {r(x.index)} -> {{{arms}}})"
        if isinstance(x, TupleMake):
            return "(" + ", ".join(r(i) for i in x.items) + ")"
        if isinstance(x, TupleItem):
            return f"{r(x.base)}[{x.item}]"
        if isinstance(x, CallUser):
            return f"call {x.function.name}({', '.join(r(a) for a in x.args)})"
        raise TypeError(f"cannot render {x!r}")

    return r(e)


def render_stmts(stmts: list[Stmt], slot_names: dict[int, str], indent: int = 0) -> list[str]:
    pad = "  " * indent
    out: list[str] = []
    for s in stmts:
        if isinstance(s, AssignSlot):
            name = slot_names.get(s.slot, f"slot{s.slot}")
            out.append(f"{pad}{name} = {render_expr(s.value, slot_names)}")
        elif isinstance(s, EmitOp):
            out.append(f"{pad}emit {render_expr(s.value, slot_names)}")
        elif isinstance(s, ExprOp):
            out.append(f"{pad}eval {render_expr(s.value, slot_names)}")
        elif isinstance(s, IfOp):
            out.append(f"{pad}if {render_expr(s.cond, slot_names)}:")
            out.extend(render_stmts(s.body, slot_names, indent + 1))
            if s.orelse:
                out.append(f"{pad}else:")
                out.extend(render_stmts(s.orelse, slot_names, indent + 1))
        elif isinstance(s, (RangeLoop, EventLoop)):
            kind = "events" if isinstance(s, EventLoop) else "loop"
            name = slot_names.get(s.slot, f"slot{s.slot}")
            lo = render_expr(s.lo, slot_names)
            hi = render_expr(s.hi, slot_names)
            out.append(f"{pad}{kind} {name} in [{lo}, {hi}):")
            out.extend(render_stmts(s.body, slot_names, indent + 1))
        elif isinstance(s, ReturnOp):
            if s.value is None:
                out.append(f"{pad}return")
            else:
                out.append(f"{pad}return {render_expr(s.value, slot_names)}")
        elif isinstance(s, BranchStmt):
            idx = render_expr(s.index, slot_names)
            out.append(f"{pad}branch {s.tag_column} @ {idx}:")
            for t, arm in sorted(s.arms.items()):
                out.append(f"{pad}  tag {t}:")
                out.extend(render_stmts(arm, slot_names, indent + 2))
        else:
            raise TypeError(f"cannot render {s!r}")
    return out


def render_plan(plan: TypedPlan) -> str:
    """Deterministic text form of a plan, for inspection and golden tests."""
    opts = plan.options
    lines = [
        f"plan {plan.query_name} over {plan.prefix}: {plan.dataset_schema}",
        "columns: " + ", ".join(sorted(plan.referenced_columns)),
        (
            f"options: range_checks={'on' if opts.range_checks else 'off'}"
            f" negative_indices={'on' if opts.negative_indices else 'off'}"
            f" eliminate_zero_lookups={'on' if opts.eliminate_zero_lookups else 'off'}"
            f" flatten_loops={'on' if opts.flatten_loops else 'off'}"
        ),
    ]
    for fn in plan.functions:
        lines.append(f"function {fn.describe_signature()}:")
        lines.extend(render_stmts(fn.body, plan.slot_names, 1))
    lines.extend(render_stmts(plan.body, plan.slot_names))
    return "\n".join(lines) + "\n"
