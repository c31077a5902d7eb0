"""Two ways to run a query over a column store.

``run_columnar`` walks a compiled plan directly over the flat arrays; no
per-event objects exist. ``run_materialized`` decodes each event into plain
Python objects and interprets the untyped source tree over them; it is the
ground truth the columnar engine must match bit for bit, and the fallback
for programs the compiler rejects.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from . import query as Q
from .codec import ColumnStore, UnionValue, decode_at
from .errors import MissingColumn, NestcolError, QueryRuntimeError, RangeError
from .plan import MATH_FNS, Ctx, TypedPlan
from .schema import List, Schema
from .transform import Options

MAX_CALL_DEPTH = 64


@dataclass
class Sink:
    """Ordered collector of emitted scalars: event order, then program order."""

    values: list = field(default_factory=list)

    def serialize(self) -> str:
        """Newline-delimited decimal text; floats carry 17 significant digits."""
        lines = []
        for v in self.values:
            if isinstance(v, bool):
                lines.append("1" if v else "0")
            elif isinstance(v, float):
                lines.append(f"{v:.17g}")
            else:
                lines.append(str(v))
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class RunReport:
    engine: str
    events: int
    seconds: float
    read_counts: dict[str, int] | None = None
    errors: list[str] = field(default_factory=list)

    @property
    def events_per_second(self) -> float:
        return self.events / self.seconds if self.seconds > 0 else float("inf")


def _event_extent(plan_prefix: str, store: ColumnStore) -> int:
    lo_col = plan_prefix + "-Lo"
    n = store.length(lo_col)
    if n != 2:
        raise NestcolError(
            f"expected a single outer list under {plan_prefix!r}; "
            f"{lo_col} has {n} offsets"
        )
    arr = store.array(lo_col)
    return int(arr[1] - arr[0])


def run_columnar(
    plan: TypedPlan,
    store: ColumnStore,
    event_range: tuple[int, int] | None = None,
    sink: Sink | None = None,
) -> tuple[Sink, RunReport]:
    """Execute a compiled plan over loaded arrays.

    The store must already validate against the dataset schema; range
    checks (if compiled in) guard reads at runtime. No decoded values are
    constructed anywhere on this path.
    """
    sink = sink if sink is not None else Sink()
    cols = {name: store.sequence(name) for name in sorted(plan.referenced_columns)}
    for name in plan.referenced_columns:
        if name not in store:
            raise MissingColumn(name)
    n_events = _event_extent(plan.prefix, store)
    ctx = Ctx(cols, [None] * plan.n_slots, sink.values)
    start = time.perf_counter()
    if event_range is not None:
        if not plan.event_granular:
            raise NestcolError(
                "this plan was loop-flattened and cannot run event subranges; "
                "compile with flatten_loops=False"
            )
        lo, hi = event_range
        if not (0 <= lo <= hi <= n_events):
            raise RangeError(f"event range [{lo}, {hi}) outside [0, {n_events})")
        plan.body[0].run_range(ctx, lo, hi)
        events = hi - lo
    else:
        for stmt in plan.body:
            stmt.run(ctx)
        events = n_events
    seconds = time.perf_counter() - start
    counts = dict(store.read_counts) if store.instrumented else None
    return sink, RunReport("columnar", events, seconds, counts)


def selective_read_profile(plan: TypedPlan, store: ColumnStore) -> set[str]:
    """Columns an actual run touches, by element-read counts.

    The store must be instrumented; counters are reset first so the profile
    reflects exactly one run.
    """
    if not store.instrumented:
        raise NestcolError("selective_read_profile needs an instrumented store")
    store.reset_counts()
    run_columnar(plan, store)
    return store.touched_columns()


# ------------------------------------------------------- materializing oracle


class _Return(Exception):
    def __init__(self, value):
        self.value = value


class _Interpreter:
    """Direct interpreter for PQ over decoded Python values.

    Implements exactly the language semantics the compiler implements, with
    type errors surfaced at run time instead of compile time.
    """

    def __init__(self, program: Q.Program, options: Options, sink: Sink):
        self.program = program
        self.options = options
        self.sink = sink
        self.depth = 0

    def run_event(self, event) -> None:
        entry = self.program.entry
        if len(entry.params) != 1:
            raise QueryRuntimeError(f"entry function {entry.name!r} must take the event record")
        try:
            self.exec_block(entry.body, {entry.params[0]: event})
        except _Return:
            pass

    def exec_block(self, stmts: list[Q.Stmt], env: dict) -> None:
        for s in stmts:
            self.exec_stmt(s, env)

    def exec_stmt(self, s: Q.Stmt, env: dict) -> None:
        if isinstance(s, Q.Assign):
            value = self.eval(s.value, env)
            if len(s.targets) == 1:
                env[s.targets[0]] = value
            else:
                if not isinstance(value, tuple) or len(value) != len(s.targets):
                    raise QueryRuntimeError(f"cannot unpack into {len(s.targets)} names")
                for name, item in zip(s.targets, value):
                    env[name] = item
        elif isinstance(s, Q.ForStmt):
            if len(s.targets) != 1:
                raise QueryRuntimeError("a loop target cannot unpack")
            target = s.targets[0]
            for item in self.iterate(s.iterable, env):
                env[target] = item
                self.exec_block(s.body, env)
        elif isinstance(s, Q.IfStmt):
            if self.truthy(self.eval(s.cond, env)):
                self.exec_block(s.body, env)
            else:
                self.exec_block(s.orelse, env)
        elif isinstance(s, Q.EmitStmt):
            value = self.eval(s.value, env)
            if isinstance(value, UnionValue):
                value = value.value
            if not isinstance(value, (bool, int, float)):
                raise QueryRuntimeError(f"cannot emit {type(value).__name__}")
            self.sink.values.append(value)
        elif isinstance(s, Q.ReturnStmt):
            raise _Return(None if s.value is None else self.eval(s.value, env))
        elif isinstance(s, Q.ExprStmt):
            self.eval(s.value, env)
        else:
            raise QueryRuntimeError(f"unsupported statement {type(s).__name__}")

    def iterate(self, e: Q.Expr, env: dict):
        if isinstance(e, Q.Call) and e.func == "range":
            args = [self.eval(a, env) for a in e.args]
            if any(isinstance(a, float) or not isinstance(a, (bool, int)) for a in args):
                raise QueryRuntimeError("range bounds must be integers")
            if len(args) == 1:
                return range(int(args[0]))
            if len(args) == 2:
                return range(int(args[0]), int(args[1]))
            raise QueryRuntimeError("range takes one or two bounds")
        value = self.eval(e, env)
        if isinstance(value, list):
            return value
        raise QueryRuntimeError(f"cannot loop over {type(value).__name__}")

    @staticmethod
    def truthy(value) -> bool:
        if isinstance(value, (bool, int, float)):
            return bool(value)
        raise QueryRuntimeError(f"{type(value).__name__} has no truth value")

    def eval(self, e: Q.Expr, env: dict):
        if isinstance(e, Q.Name):
            try:
                return env[e.id]
            except KeyError:
                raise QueryRuntimeError(f"undefined name {e.id!r}") from None
        if isinstance(e, Q.Literal):
            if e.value is None:
                raise QueryRuntimeError("none values are not supported")
            return e.value
        if isinstance(e, Q.Attribute):
            base = self.eval(e.base, env)
            if isinstance(base, UnionValue):
                base = base.value
            if not isinstance(base, dict):
                raise QueryRuntimeError(f"cannot take field {e.attr!r} of {type(base).__name__}")
            if e.attr not in base:
                raise QueryRuntimeError(f"no such field {e.attr!r}")
            return base[e.attr]
        if isinstance(e, Q.Subscript):
            base = self.eval(e.base, env)
            if isinstance(base, UnionValue):
                base = base.value
            index = self.eval(e.index, env)
            if not isinstance(base, list):
                raise QueryRuntimeError(f"cannot subscript {type(base).__name__}")
            if isinstance(index, float):
                raise QueryRuntimeError("list indices must be integers")
            index = int(index)
            if index < 0:
                if not self.options.negative_indices:
                    raise RangeError(f"negative index {index} with negative indices disabled")
                index += len(base)
            if not 0 <= index < len(base):
                raise RangeError(f"index {index} out of range [0, {len(base)})")
            return base[index]
        if isinstance(e, Q.Call):
            return self.call(e, env)
        if isinstance(e, Q.BinOp):
            left = self.scalar(self.eval(e.left, env), e)
            right = self.scalar(self.eval(e.right, env), e)
            try:
                return Q_BIN[e.op](left, right)
            except ZeroDivisionError:
                raise QueryRuntimeError("division by zero") from None
        if isinstance(e, Q.Compare):
            if e.op == "is":
                left = self.eval(e.left, env)
                right = self.eval(e.right, env)
                if not isinstance(left, (list, dict, UnionValue)) or not isinstance(
                    right, (list, dict, UnionValue)
                ):
                    raise QueryRuntimeError("'is' compares stored objects by reference")
                return left is right
            left = self.scalar(self.eval(e.left, env), e)
            right = self.scalar(self.eval(e.right, env), e)
            return Q_CMP[e.op](left, right)
        if isinstance(e, Q.BoolOp):
            left = self.truthy(self.eval(e.left, env))
            if e.op == "and":
                return self.truthy(self.eval(e.right, env)) if left else False
            return True if left else self.truthy(self.eval(e.right, env))
        if isinstance(e, Q.Not):
            return not self.truthy(self.eval(e.operand, env))
        if isinstance(e, Q.Neg):
            return -self.scalar(self.eval(e.operand, env), e)
        if isinstance(e, Q.TupleExpr):
            return tuple(self.eval(x, env) for x in e.items)
        raise QueryRuntimeError(f"unsupported expression {type(e).__name__}")

    def scalar(self, value, node):
        if isinstance(value, UnionValue):
            value = value.value
        if isinstance(value, (bool, int, float)):
            return value
        raise QueryRuntimeError(f"{type(value).__name__} cannot be used as a plain value")

    def call(self, e: Q.Call, env: dict):
        f = e.func
        if f == "len":
            if len(e.args) != 1:
                raise QueryRuntimeError("len takes one argument")
            value = self.eval(e.args[0], env)
            if isinstance(value, UnionValue):
                value = value.value
            if not isinstance(value, list):
                raise QueryRuntimeError(f"len needs a list, not {type(value).__name__}")
            return len(value)
        if f == "isinstance":
            return self.dyn_isinstance(e, env)
        if f == "range":
            raise QueryRuntimeError("range() is only usable as a for-loop iterable")
        if f in MATH_FNS:
            if len(e.args) != 1:
                raise QueryRuntimeError(f"{f} takes one argument")
            return MATH_FNS[f](self.scalar(self.eval(e.args[0], env), e))
        fn_def = self.program.function(f)
        if fn_def is None:
            raise QueryRuntimeError(f"unknown function {f!r}")
        if len(e.args) != len(fn_def.params):
            raise QueryRuntimeError(f"{f} takes {len(fn_def.params)} arguments")
        args = [self.eval(a, env) for a in e.args]
        self.depth += 1
        if self.depth > MAX_CALL_DEPTH:
            self.depth = 0
            raise QueryRuntimeError(f"call depth exceeded (recursive {f!r}?)")
        try:
            self.exec_block(fn_def.body, dict(zip(fn_def.params, args)))
            return None
        except _Return as r:
            return r.value
        finally:
            self.depth -= 1

    def dyn_isinstance(self, e: Q.Call, env: dict):
        if len(e.args) != 2 or not isinstance(e.args[1], Q.Name):
            raise QueryRuntimeError("isinstance takes a value and a literal type name")
        tname = e.args[1].id
        value = self.eval(e.args[0], env)
        if tname == "list":
            target = value.value if isinstance(value, UnionValue) else value
            return isinstance(target, list)
        if tname == "record":
            target = value.value if isinstance(value, UnionValue) else value
            return isinstance(target, dict)
        if isinstance(value, UnionValue):
            if value.nickname is None:
                raise QueryRuntimeError(f"unknown type name {tname!r}")
            return value.nickname == tname
        raise QueryRuntimeError(f"unknown type name {tname!r}")


Q_BIN = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a / b,
    "//": lambda a, b: a // b,
    "%": lambda a, b: a % b,
    "**": lambda a, b: a**b,
}

Q_CMP = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def run_materialized(
    source: str | Q.Program,
    store: ColumnStore,
    dataset_schema: Schema,
    prefix: str,
    options: Options | None = None,
    event_range: tuple[int, int] | None = None,
    sink: Sink | None = None,
) -> tuple[Sink, RunReport]:
    """Decode each event into objects and interpret the query over them.

    This is the materialization cost the columnar path avoids; it defines
    the expected output for every compilable program.
    """
    if not isinstance(dataset_schema, List):
        raise NestcolError("dataset schema must be an outer List of events")
    options = options or Options()
    program = Q.parse(source) if isinstance(source, str) else source
    sink = sink if sink is not None else Sink()
    interp = _Interpreter(program, options, sink)
    n_events = _event_extent(prefix, store)
    lo, hi = event_range if event_range is not None else (0, n_events)
    if not (0 <= lo <= hi <= n_events):
        raise RangeError(f"event range [{lo}, {hi}) outside [0, {n_events})")
    item_schema = dataset_schema.item
    item_prefix = prefix + "-Ld"
    base = int(store.array(prefix + "-Lo")[0])
    start = time.perf_counter()
    for ev in range(lo, hi):
        event = decode_at(store, item_schema, item_prefix, base + ev)
        interp.run_event(event)
    seconds = time.perf_counter() - start
    counts = dict(store.read_counts) if store.instrumented else None
    return sink, RunReport("materialized", hi - lo, seconds, counts)
