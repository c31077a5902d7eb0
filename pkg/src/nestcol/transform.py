"""Compile parsed queries into array-index plans.

Type propagation and rewriting happen in one recursive sweep: every name
that refers to a stored object is tracked as (schema node, column prefix,
integer index), and each use site is rewritten into offset arithmetic and
array reads. Any use of a stored object the rewriter does not recognize is
a compile-time error, because at runtime these objects are plain integers.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Callable, Iterable

from . import query as Q
from .errors import CompileError, InvalidSchema
from .plan import (
    AndOp,
    Arith,
    ArrayRead,
    AssignSlot,
    BoundsCheck,
    BranchExpr,
    BranchStmt,
    CallUser,
    CheckedArrayRead,
    CompareOp,
    Const,
    EmitOp,
    EventLoop,
    Expr,
    ExprOp,
    IfOp,
    ListLen,
    MathCall,
    NegOp,
    NotOp,
    OrOp,
    PlanFunction,
    PlanNode,
    PyIndex,
    RangeLoop,
    ReturnOp,
    SlotRef,
    Stmt,
    TupleItem,
    TupleMake,
    TypedPlan,
    walk,
)
from .schema import (
    Dtype,
    List,
    Primitive,
    Record,
    RoleKind,
    Schema,
    Union,
    columns_for,
)

MAX_LIVE_BRANCHES = 256


class ScalarType(enum.IntEnum):
    """Static scalar types, ordered so joins are a max()."""

    BOOL = 0
    INT = 1
    FLOAT = 2


_DTYPE_STYPE = {
    Dtype.BOOL: ScalarType.BOOL,
    Dtype.INT64: ScalarType.INT,
    Dtype.UINT8: ScalarType.INT,
    Dtype.FLOAT64: ScalarType.FLOAT,
}


@dataclass(frozen=True)
class Options:
    """Compilation switches.

    Range checks guard every subscript and array read and default on; the
    unchecked mode exists for benchmarks and behaves like C array access.
    Negative ("from the end") indices default to the range-check setting
    because without checks they silently read a neighboring list.
    """

    range_checks: bool = True
    negative_indices: bool | None = None
    eliminate_zero_lookups: bool = True
    flatten_loops: bool = True

    def __post_init__(self):
        if self.negative_indices is None:
            object.__setattr__(self, "negative_indices", self.range_checks)


# ------------------------------------------------------------------- bindings


@dataclass
class ScalarBinding:
    stype: ScalarType
    slot: int


@dataclass
class ObjectBinding:
    """A stored object: its schema node, column prefix, and the frame slot
    holding its integer index. Primitive object bindings appear only as
    loop targets; reading the name yields the element value."""

    schema: Schema
    prefix: str
    slot: int


@dataclass
class TupleBinding:
    items: tuple["Binding", ...]


Binding = ScalarBinding | ObjectBinding | TupleBinding


def _binding_slots(b: Binding) -> Iterable[int]:
    if isinstance(b, TupleBinding):
        for item in b.items:
            yield from _binding_slots(item)
    else:
        yield b.slot


class SymbolTable:
    """Name bindings plus the union-tag assumptions currently in force.

    Conceptually this is an ordered list of branches: one per combination
    of still-possible tags of the union-typed names in scope. ``branches``
    enumerates that list; binding a union multiplies it and a type guard
    prunes it. A name holds exactly one schema node within a branch.
    """

    def __init__(self):
        self.syms: dict[str, Binding] = {}
        # (tag column, slot) -> tags still possible for the union instance
        # whose index lives in that slot.
        self.assumptions: dict[tuple[str, int], frozenset[int]] = {}
        self._purged: set[int] = set()

    def lookup(self, name: str) -> Binding | None:
        return self.syms.get(name)

    def bind(self, name: str, binding: Binding) -> None:
        for slot in _binding_slots(binding):
            self._purge_slot(slot)
        self.syms[name] = binding

    def _purge_slot(self, slot: int) -> None:
        stale = [k for k in self.assumptions if k[1] == slot]
        for k in stale:
            del self.assumptions[k]
        self._purged.add(slot)

    def assume(self, key: tuple[str, int], tags: frozenset[int]) -> None:
        prior = self.assumptions.get(key)
        self.assumptions[key] = tags if prior is None else (prior & tags)

    def allowed(self, key: tuple[str, int], n_alternatives: int) -> frozenset[int]:
        got = self.assumptions.get(key)
        return got if got is not None else frozenset(range(n_alternatives))

    def snapshot(self):
        return dict(self.syms), dict(self.assumptions), set(self._purged)

    def restore(self, snap) -> None:
        """Leave a block: new names vanish, scalars rejoin by type widening,
        assumptions revert except where the block rebound the slot."""
        syms, assumptions, purged = snap
        merged: dict[str, Binding] = {}
        for name, outer in syms.items():
            inner = self.syms.get(name)
            if (
                isinstance(outer, ScalarBinding)
                and isinstance(inner, ScalarBinding)
                and inner.slot == outer.slot
            ):
                merged[name] = ScalarBinding(max(outer.stype, inner.stype), outer.slot)
            else:
                merged[name] = outer
        self.syms = merged
        invalidated = self._purged - purged
        self.assumptions = {
            k: v for k, v in assumptions.items() if k[1] not in invalidated
        }

    def union_entries(self) -> list[tuple[str, ObjectBinding]]:
        return [
            (n, b)
            for n, b in self.syms.items()
            if isinstance(b, ObjectBinding) and isinstance(b.schema, Union)
        ]

    def live_branch_count(self) -> int:
        count = 1
        for _, b in self.union_entries():
            key = (b.prefix + "-Ut", b.slot)
            count *= max(1, len(self.allowed(key, len(b.schema.alternatives))))
        return count

    def branches(self):
        """Enumerate the live branches: (tag assignment per union name,
        concrete bindings). Exponential; meant for tests and diagnostics."""
        unions = self.union_entries()
        choices = []
        for name, b in unions:
            key = (b.prefix + "-Ut", b.slot)
            choices.append(sorted(self.allowed(key, len(b.schema.alternatives))))
        for combo in itertools.product(*choices) if unions else [()]:
            tags = {name: tag for (name, _), tag in zip(unions, combo)}
            bindings = dict(self.syms)
            for (name, b), tag in zip(unions, combo):
                alt = b.schema.alternatives[tag]
                bindings[name] = ObjectBinding(alt, f"{b.prefix}-Ud{tag}", b.slot)
            yield tags, bindings


# ------------------------------------------------------------ compiled values


@dataclass
class CScalar:
    expr: Expr
    stype: ScalarType


@dataclass
class CObject:
    schema: Schema  # List, Record, or Union
    prefix: str
    index: Expr


@dataclass
class CTuple:
    items: tuple["CV", ...]


@dataclass
class CVoid:
    expr: Expr  # a call to a function that returns nothing


@dataclass
class CTupleCall:
    expr: Expr
    descs: tuple


CV = CScalar | CObject | CTuple | CVoid | CTupleCall


def _kind_name(cv: CV) -> str:
    if isinstance(cv, CObject):
        if isinstance(cv.schema, List):
            return "a list object"
        if isinstance(cv.schema, Record):
            return "a record object"
        return "a union object"
    if isinstance(cv, CTuple):
        return "a tuple"
    if isinstance(cv, (CVoid, CTupleCall)):
        return "this call result"
    return "a value"


RESERVED_FUNCTIONS = {"len", "range", "isinstance", "emit"} | set(Q.MATH_BUILTINS)


class Compiler:
    """Shared state for one compilation: slots, specializations, options."""

    def __init__(self, program: Q.Program, dataset_schema: Schema, prefix: str, options: Options):
        if not isinstance(dataset_schema, List):
            raise InvalidSchema("dataset schema must be an outer List of events")
        self.program = program
        self.dataset_schema = dataset_schema
        self.event_schema = dataset_schema.item
        self.prefix = prefix
        self.options = options
        self.roles: dict[str, RoleKind] = {
            c.render(): role.kind for c, role in columns_for(dataset_schema, prefix).items()
        }
        self.n_slots = 0
        self.slot_names: dict[int, str] = {}
        self.specializations: dict[tuple, PlanFunction] = {}
        self.spec_order: list[PlanFunction] = []
        self.in_progress: set[str] = set()

    def alloc(self, name: str) -> int:
        slot = self.n_slots
        self.n_slots += 1
        display = name
        if display in self.slot_names.values():
            display = f"{name}.{slot}"
        self.slot_names[slot] = display
        return slot

    def read(self, column: str, index: Expr) -> Expr:
        if self.options.range_checks:
            return CheckedArrayRead(column, index)
        return ArrayRead(column, index)

    def compile(self) -> TypedPlan:
        for fn in self.program.functions:
            if fn.name in RESERVED_FUNCTIONS:
                raise CompileError(f"{fn.name!r} is a builtin and cannot be redefined", fn.line, fn.col)
        names = [f.name for f in self.program.functions]
        if len(set(names)) != len(names):
            dup = [f for f in self.program.functions if names.count(f.name) > 1][1]
            raise CompileError(f"function {dup.name!r} defined twice", dup.line, dup.col)
        entry = self.program.entry
        if len(entry.params) != 1:
            raise CompileError(
                f"entry function {entry.name!r} must take exactly the event record",
                entry.line,
                entry.col,
            )
        table = SymbolTable()
        ev_slot = self.alloc(entry.params[0])
        table.bind(entry.params[0], ObjectBinding(self.event_schema, self.prefix + "-Ld", ev_slot))
        fc = _FuncCompiler(self, table, entry.name, is_entry=True)
        body = fc.compile_block(entry.body)
        ev_lo = self.prefix + "-Lo"
        top: list[Stmt] = [
            EventLoop(ev_slot, self.read(ev_lo, Const(0)), self.read(ev_lo, Const(1)), body)
        ]
        plan = TypedPlan(
            query_name=entry.name,
            prefix=self.prefix,
            dataset_schema=self.dataset_schema,
            body=top,
            n_slots=self.n_slots,
            slot_names=self.slot_names,
            referenced_columns=frozenset(),
            column_roles=self.roles,
            functions=self.spec_order,
            options=self.options,
            event_slot=ev_slot,
        )
        if self.options.flatten_loops:
            plan = flatten_loops(plan)
        if self.options.eliminate_zero_lookups:
            plan = eliminate_zero_lookups(plan)
        return _with_columns(plan)


def _with_columns(plan: TypedPlan) -> TypedPlan:
    cols: set[str] = set()
    for top in list(plan.body) + [s for f in plan.functions for s in f.body]:
        for node in walk(top):
            if isinstance(node, (ArrayRead, CheckedArrayRead)):
                cols.add(node.column)
            elif isinstance(node, ListLen):
                cols.add(node.offset_column)
            elif isinstance(node, (BranchExpr, BranchStmt)):
                cols.add(node.tag_column)
    plan.referenced_columns = frozenset(cols)
    return plan


class _FuncCompiler:
    """Compiles one function body under one argument signature."""

    def __init__(self, compiler: Compiler, table: SymbolTable, name: str, is_entry: bool = False):
        self.c = compiler
        self.table = table
        self.name = name
        self.is_entry = is_entry
        self.return_desc: tuple | None = None

    def err(self, node, message: str) -> CompileError:
        return CompileError(message, getattr(node, "line", 0), getattr(node, "col", 0))

    # ---- statements ----

    def compile_block(self, stmts: list[Q.Stmt]) -> list[Stmt]:
        out: list[Stmt] = []
        for s in stmts:
            out.extend(self.compile_stmt(s))
        return out

    def compile_stmt(self, s: Q.Stmt) -> list[Stmt]:
        if isinstance(s, Q.Assign):
            return self.compile_assign(s)
        if isinstance(s, Q.ForStmt):
            return [self.compile_for(s)]
        if isinstance(s, Q.IfStmt):
            return [self.compile_if(s)]
        if isinstance(s, Q.EmitStmt):
            cv = self.value_of(self.compile_expr(s.value), s.value)
            return [EmitOp(cv.expr)]
        if isinstance(s, Q.ReturnStmt):
            return [self.compile_return(s)]
        if isinstance(s, Q.ExprStmt):
            cv = self.compile_expr(s.value)
            if isinstance(cv, (CVoid, CTupleCall)):
                return [ExprOp(cv.expr)]
            if isinstance(cv, CScalar):
                return [ExprOp(cv.expr)]
            if isinstance(cv, CObject):
                return [ExprOp(cv.index)]
            return [ExprOp(item) for item in _leaf_exprs(cv)]
        raise self.err(s, f"unsupported statement {type(s).__name__}")

    def compile_assign(self, s: Q.Assign) -> list[Stmt]:
        out: list[Stmt] = []
        cv = self.compile_expr(s.value)
        if len(s.targets) == 1:
            self.bind_single(s.targets[0], cv, out, s)
            return out
        items = self.tuple_items(cv, out, s)
        if len(items) != len(s.targets):
            raise self.err(s, f"cannot unpack {len(items)} values into {len(s.targets)} names")
        for name, item in zip(s.targets, items):
            self.bind_single(name, item, out, s)
        return out

    def tuple_items(self, cv: CV, out: list[Stmt], node) -> tuple[CV, ...]:
        if isinstance(cv, CTuple):
            return cv.items
        if isinstance(cv, CTupleCall):
            tmp = self.c.alloc("$ret")
            out.append(AssignSlot(tmp, cv.expr))
            return _project_tuple(SlotRef(tmp), cv.descs)
        raise self.err(node, f"cannot unpack {_kind_name(cv)}")

    def bind_single(self, name: str, cv: CV, out: list[Stmt], node) -> None:
        existing = self.table.lookup(name)
        if isinstance(cv, CScalar):
            if existing is None:
                slot = self.c.alloc(name)
            elif isinstance(existing, ScalarBinding):
                slot = existing.slot
            else:
                raise self.err(node, f"{name!r} already names an object; it cannot hold a number")
            out.append(AssignSlot(slot, cv.expr))
            self.table.bind(name, ScalarBinding(cv.stype, slot))
            return
        if isinstance(cv, CObject):
            if existing is None:
                slot = self.c.alloc(name)
            elif isinstance(existing, ObjectBinding):
                if existing.schema != cv.schema or existing.prefix != cv.prefix:
                    raise self.err(
                        node,
                        f"{name!r} cannot hold values of two different stored types in one scope",
                    )
                slot = existing.slot
            else:
                raise self.err(node, f"{name!r} cannot change between object and value forms")
            out.append(AssignSlot(slot, cv.index))
            self.table.bind(name, ObjectBinding(cv.schema, cv.prefix, slot))
            if isinstance(cv.schema, Union) and self.table.live_branch_count() > MAX_LIVE_BRANCHES:
                raise self.err(node, f"more than {MAX_LIVE_BRANCHES} live union branches")
            return
        if isinstance(cv, (CTuple, CTupleCall)):
            items = self.tuple_items(cv, out, node)
            if existing is not None and not isinstance(existing, TupleBinding):
                raise self.err(node, f"{name!r} cannot change between tuple and other forms")
            bindings = tuple(
                self.materialize(item, f"{name}.{i}", out, node) for i, item in enumerate(items)
            )
            self.table.bind(name, TupleBinding(bindings))
            return
        raise self.err(node, "this call returns nothing; it cannot be assigned")

    def materialize(self, cv: CV, hint: str, out: list[Stmt], node) -> Binding:
        if isinstance(cv, CScalar):
            slot = self.c.alloc(hint)
            out.append(AssignSlot(slot, cv.expr))
            return ScalarBinding(cv.stype, slot)
        if isinstance(cv, CObject):
            slot = self.c.alloc(hint)
            out.append(AssignSlot(slot, cv.index))
            return ObjectBinding(cv.schema, cv.prefix, slot)
        if isinstance(cv, CTuple):
            return TupleBinding(
                tuple(self.materialize(x, f"{hint}.{i}", out, node) for i, x in enumerate(cv.items))
            )
        raise self.err(node, f"cannot store {_kind_name(cv)} in a tuple")

    def compile_for(self, s: Q.ForStmt) -> Stmt:
        if len(s.targets) != 1:
            raise self.err(s, "a loop target cannot unpack")
        target = s.targets[0]
        if isinstance(s.iterable, Q.Call) and s.iterable.func == "range":
            args = s.iterable.args
            if not 1 <= len(args) <= 2:
                raise self.err(s.iterable, "range takes one or two bounds")
            bounds = []
            for a in args:
                cv = self.value_of(self.compile_expr(a), a)
                if cv.stype is ScalarType.FLOAT:
                    raise self.err(a, "range bounds must be integers")
                bounds.append(cv.expr)
            lo, hi = (Const(0), bounds[0]) if len(bounds) == 1 else bounds
            slot = self.c.alloc(target)
            snap = self.table.snapshot()
            self.table.bind(target, ScalarBinding(ScalarType.INT, slot))
            body = self.compile_block(s.body)
            self.table.restore(snap)
            return RangeLoop(slot, lo, hi, body)
        cv = self.concretize(self.compile_expr(s.iterable))
        if not isinstance(cv, CObject) or not isinstance(cv.schema, List):
            kind = _kind_name(cv) if isinstance(cv, (CObject, CTuple)) else "a plain value"
            raise self.err(s.iterable, f"cannot loop over {kind}; only lists and range() iterate")
        off = cv.prefix + "-Lo"
        lo = self.c.read(off, cv.index)
        hi = self.c.read(off, Arith("+", cv.index, Const(1)))
        slot = self.c.alloc(target)
        snap = self.table.snapshot()
        self.table.bind(target, ObjectBinding(cv.schema.item, cv.prefix + "-Ld", slot))
        body = self.compile_block(s.body)
        self.table.restore(snap)
        return RangeLoop(slot, lo, hi, body)

    def compile_if(self, s: Q.IfStmt) -> Stmt:
        cond, guards = self.compile_cond(s.cond)
        snap = self.table.snapshot()
        for key, tags in guards:
            self.table.assume(key, tags)
        body = self.compile_block(s.body)
        self.table.restore(snap)
        snap = self.table.snapshot()
        orelse = self.compile_block(s.orelse)
        self.table.restore(snap)
        return IfOp(cond.expr, body, orelse)

    def compile_return(self, s: Q.ReturnStmt) -> Stmt:
        if s.value is None:
            self.merge_return(("none",), s)
            return ReturnOp(None)
        cv = self.compile_expr(s.value)
        if isinstance(cv, CScalar):
            self.merge_return(("scalar", cv.stype), s)
            return ReturnOp(cv.expr)
        if isinstance(cv, CObject):
            self.merge_return(("object", cv.schema, cv.prefix), s)
            return ReturnOp(cv.index)
        if isinstance(cv, CTuple):
            descs, exprs = _tuple_return(cv, self, s)
            self.merge_return(("tuple", descs), s)
            return ReturnOp(TupleMake(exprs))
        raise self.err(s, f"cannot return {_kind_name(cv)}")

    def merge_return(self, desc: tuple, node) -> None:
        if self.is_entry:
            return
        if self.return_desc is None:
            self.return_desc = desc
            return
        prev = self.return_desc
        if prev[0] == "scalar" and desc[0] == "scalar":
            self.return_desc = ("scalar", max(prev[1], desc[1]))
            return
        if prev == desc:
            return
        raise self.err(node, f"function {self.name!r} returns two incompatible kinds of value")

    # ---- conditions and type guards ----

    def compile_cond(self, e: Q.Expr) -> tuple[CScalar, list]:
        if isinstance(e, Q.Call) and e.func == "isinstance":
            return self.compile_isinstance(e)
        if isinstance(e, Q.BoolOp) and e.op == "and":
            left, gl = self.compile_cond(e.left)
            snap = self.table.snapshot()
            for key, tags in gl:
                self.table.assume(key, tags)
            right, gr = self.compile_cond(e.right)
            self.table.restore(snap)
            return CScalar(AndOp(left.expr, right.expr), ScalarType.BOOL), gl + gr
        if isinstance(e, Q.BoolOp) and e.op == "or":
            left, _ = self.compile_cond(e.left)
            right, _ = self.compile_cond(e.right)
            return CScalar(OrOp(left.expr, right.expr), ScalarType.BOOL), []
        cv = self.value_of(self.compile_expr(e), e)
        return cv, []

    def compile_isinstance(self, e: Q.Call) -> tuple[CScalar, list]:
        if len(e.args) != 2:
            raise self.err(e, "isinstance takes a value and a type name")
        tnode = e.args[1]
        if not isinstance(tnode, Q.Name):
            raise self.err(tnode, "the type to check must be a literal name, not a computed value")
        tname = tnode.id
        cv = self.compile_expr(e.args[0])
        if not isinstance(cv, CObject):
            raise self.err(e.args[0], "isinstance inspects stored objects")
        if isinstance(cv.schema, (List, Record)):
            if tname == "list":
                return CScalar(Const(isinstance(cv.schema, List)), ScalarType.BOOL), []
            if tname == "record":
                return CScalar(Const(isinstance(cv.schema, Record)), ScalarType.BOOL), []
            self._reject_type_name(tnode, tname)
        union: Union = cv.schema
        if tname == "list":
            targets = frozenset(t for t, a in enumerate(union.alternatives) if isinstance(a, List))
        elif tname == "record":
            targets = frozenset(t for t, a in enumerate(union.alternatives) if isinstance(a, Record))
        else:
            tag = union.tag_of_nickname(tname)
            if tag is None:
                self._reject_type_name(tnode, tname)
            targets = frozenset([tag])
        key = None
        if isinstance(cv.index, SlotRef):
            key = (cv.prefix + "-Ut", cv.index.slot)
        allowed = (
            self.table.allowed(key, len(union.alternatives))
            if key is not None
            else frozenset(range(len(union.alternatives)))
        )
        live_targets = targets & allowed
        guards = [(key, targets)] if key is not None else []
        if live_targets == allowed:
            return CScalar(Const(True), ScalarType.BOOL), guards
        if not live_targets:
            return CScalar(Const(False), ScalarType.BOOL), []
        tag_read = lambda: self.c.read(cv.prefix + "-Ut", cv.index)
        expr: Expr | None = None
        for t in sorted(live_targets):
            cmp = CompareOp("==", tag_read(), Const(t))
            expr = cmp if expr is None else OrOp(expr, cmp)
        return CScalar(expr, ScalarType.BOOL), guards

    def _reject_type_name(self, node, tname: str):
        if self.table.lookup(tname) is not None:
            raise self.err(node, f"{tname!r} is a variable; the type to check must be a literal name")
        raise self.err(node, f"unknown type name {tname!r} (use 'list', 'record', or a union nickname)")

    # ---- expressions ----

    def compile_expr(self, e: Q.Expr) -> CV:
        if isinstance(e, Q.Name):
            return self.compile_name(e)
        if isinstance(e, Q.Literal):
            if e.value is None:
                raise self.err(e, "none values are not supported in compiled queries")
            st = (
                ScalarType.BOOL
                if isinstance(e.value, bool)
                else ScalarType.INT
                if isinstance(e.value, int)
                else ScalarType.FLOAT
            )
            return CScalar(Const(e.value), st)
        if isinstance(e, Q.Attribute):
            return self.attr_of(self.compile_expr(e.base), e)
        if isinstance(e, Q.Subscript):
            return self.subscript_of(self.compile_expr(e.base), e)
        if isinstance(e, Q.Call):
            return self.compile_call(e)
        if isinstance(e, Q.BinOp):
            left = self.value_of(self.compile_expr(e.left), e.left)
            right = self.value_of(self.compile_expr(e.right), e.right)
            if e.op == "/":
                st = ScalarType.FLOAT
            elif e.op == "**":
                st = max(ScalarType.INT, left.stype, right.stype)
            else:
                st = max(ScalarType.INT, left.stype, right.stype)
            return CScalar(Arith(e.op, left.expr, right.expr), st)
        if isinstance(e, Q.Compare):
            if e.op == "is":
                return self.identity_eq(e)
            left = self.value_of(self.compile_expr(e.left), e.left)
            right = self.value_of(self.compile_expr(e.right), e.right)
            return CScalar(CompareOp(e.op, left.expr, right.expr), ScalarType.BOOL)
        if isinstance(e, (Q.BoolOp,)):
            cv, _ = self.compile_cond(e)
            return cv
        if isinstance(e, Q.Not):
            cv = self.value_of(self.compile_expr(e.operand), e.operand)
            return CScalar(NotOp(cv.expr), ScalarType.BOOL)
        if isinstance(e, Q.Neg):
            cv = self.value_of(self.compile_expr(e.operand), e.operand)
            return CScalar(NegOp(cv.expr), max(ScalarType.INT, cv.stype))
        if isinstance(e, Q.TupleExpr):
            return CTuple(tuple(self.compile_expr(x) for x in e.items))
        raise self.err(e, f"unsupported expression {type(e).__name__}")

    def compile_name(self, e: Q.Name) -> CV:
        b = self.table.lookup(e.id)
        if b is None:
            raise self.err(e, f"undefined name {e.id!r}")
        return self._binding_cv(b)

    def _binding_cv(self, b: Binding) -> CV:
        if isinstance(b, ScalarBinding):
            return CScalar(SlotRef(b.slot), b.stype)
        if isinstance(b, ObjectBinding):
            if isinstance(b.schema, Primitive):
                return CScalar(
                    self.c.read(b.prefix, SlotRef(b.slot)), _DTYPE_STYPE[b.schema.dtype]
                )
            return CObject(b.schema, b.prefix, SlotRef(b.slot))
        return CTuple(tuple(self._binding_cv(item) for item in b.items))

    def concretize(self, cv: CV) -> CV:
        """Resolve a union object whose guards leave exactly one alternative."""
        while isinstance(cv, CObject) and isinstance(cv.schema, Union):
            if not isinstance(cv.index, SlotRef):
                break
            key = (cv.prefix + "-Ut", cv.index.slot)
            allowed = self.table.allowed(key, len(cv.schema.alternatives))
            if len(allowed) != 1:
                break
            cv = self.union_alt(cv, next(iter(allowed)))
        return cv

    def union_alt(self, cv: CObject, tag: int) -> CV:
        alt = cv.schema.alternatives[tag]
        prefix = f"{cv.prefix}-Ud{tag}"
        index = self.c.read(cv.prefix + "-Uo", cv.index)
        if isinstance(alt, Primitive):
            return CScalar(self.c.read(prefix, index), _DTYPE_STYPE[alt.dtype])
        return CObject(alt, prefix, index)

    def dispatch_union(self, cv: CObject, node, fn: Callable[[CV], CV]) -> CScalar:
        """Rewrite a use of a union by branching on its runtime tag. Every
        live alternative must yield a scalar for the arms to merge."""
        union: Union = cv.schema
        if isinstance(cv.index, SlotRef):
            key = (cv.prefix + "-Ut", cv.index.slot)
            allowed = self.table.allowed(key, len(union.alternatives))
        else:
            allowed = frozenset(range(len(union.alternatives)))
        if not allowed:
            raise self.err(node, "type guards leave no possible alternative here")
        arms: dict[int, Expr] = {}
        stype = ScalarType.BOOL
        for t in sorted(allowed):
            out = fn(self.union_alt(cv, t))
            out = self.value_of(out, node)
            arms[t] = out.expr
            stype = max(stype, out.stype)
        if len(arms) == 1:
            return CScalar(next(iter(arms.values())), stype)
        return CScalar(BranchExpr(cv.prefix + "-Ut", cv.index, arms), stype)

    def value_of(self, cv: CV, node) -> CScalar:
        if isinstance(cv, CScalar):
            return cv
        if isinstance(cv, CObject) and isinstance(cv.schema, Union):
            return self.dispatch_union(cv, node, lambda alt: alt)
        raise self.err(
            node,
            f"{_kind_name(cv)} cannot be used as a plain value; "
            "take its fields or elements instead",
        )

    def attr_of(self, base: CV, e: Q.Attribute) -> CV:
        base = self.concretize(base)
        if isinstance(base, CObject) and isinstance(base.schema, Record):
            sub = base.schema.fields.get(e.attr)
            if sub is None:
                raise self.err(e, f"no such field {e.attr!r} in {base.schema}")
            prefix = f"{base.prefix}-R_{e.attr}"
            if isinstance(sub, Primitive):
                return CScalar(self.c.read(prefix, base.index), _DTYPE_STYPE[sub.dtype])
            return CObject(sub, prefix, base.index)
        if isinstance(base, CObject) and isinstance(base.schema, Union):
            return self.dispatch_union(base, e, lambda alt: self.attr_of(alt, e))
        raise self.err(e, f"cannot take field {e.attr!r} of {_kind_name(base)}")

    def subscript_of(self, base: CV, e: Q.Subscript) -> CV:
        base = self.concretize(base)
        if isinstance(base, CObject) and isinstance(base.schema, List):
            idx = self.value_of(self.compile_expr(e.index), e.index)
            if idx.stype is ScalarType.FLOAT:
                raise self.err(e.index, "list indices must be integers")
            off = base.prefix + "-Lo"
            checked = self.c.options.range_checks
            index_expr = idx.expr
            if self.c.options.negative_indices:
                index_expr = PyIndex(index_expr, ListLen(off, base.index, checked))
            if checked:
                index_expr = BoundsCheck(index_expr, Const(0), ListLen(off, base.index, checked))
            ordinal = Arith("+", self.c.read(off, base.index), index_expr)
            item = base.schema.item
            if isinstance(item, Primitive):
                return CScalar(self.c.read(base.prefix + "-Ld", ordinal), _DTYPE_STYPE[item.dtype])
            return CObject(item, base.prefix + "-Ld", ordinal)
        if isinstance(base, CObject) and isinstance(base.schema, Union):
            return self.dispatch_union(base, e, lambda alt: self.subscript_of(alt, e))
        raise self.err(e, f"cannot subscript {_kind_name(base)}; only lists take indices")

    def identity_eq(self, e: Q.Compare) -> CScalar:
        left = self.compile_expr(e.left)
        right = self.compile_expr(e.right)
        if not isinstance(left, CObject) or not isinstance(right, CObject):
            raise self.err(e, "'is' compares stored objects by reference")
        if left.prefix != right.prefix:
            # Different schema nodes can never be the same object.
            return CScalar(Const(False), ScalarType.BOOL)
        return CScalar(CompareOp("==", left.index, right.index), ScalarType.BOOL)

    def compile_call(self, e: Q.Call) -> CV:
        f = e.func
        if f == "isinstance":
            cv, _ = self.compile_isinstance(e)
            return cv
        if f == "len":
            if len(e.args) != 1:
                raise self.err(e, "len takes one argument")
            arg = self.concretize(self.compile_expr(e.args[0]))
            if isinstance(arg, CObject) and isinstance(arg.schema, List):
                checked = self.c.options.range_checks
                return CScalar(ListLen(arg.prefix + "-Lo", arg.index, checked), ScalarType.INT)
            raise self.err(
                e.args[0],
                f"len needs a list, not {_kind_name(arg)}"
                + (" (guard the union with isinstance first)" if _is_union(arg) else ""),
            )
        if f == "range":
            raise self.err(e, "range() is only usable as a for-loop iterable")
        if f in Q.MATH_BUILTINS:
            if len(e.args) != 1:
                raise self.err(e, f"{f} takes one argument")
            arg = self.value_of(self.compile_expr(e.args[0]), e.args[0])
            st = max(ScalarType.INT, arg.stype) if f == "abs" else ScalarType.FLOAT
            return CScalar(MathCall(f, arg.expr), st)
        return self.user_call(e)

    def user_call(self, e: Q.Call) -> CV:
        fn_def = self.c.program.function(e.func)
        if fn_def is None:
            raise self.err(e, f"unknown function {e.func!r}")
        if e.func in self.c.in_progress:
            raise self.err(e, f"recursive call to {e.func!r} cannot be compiled")
        args = [self.compile_expr(a) for a in e.args]
        for a, node in zip(args, e.args):
            if isinstance(a, (CVoid, CTupleCall)):
                raise self.err(node, "assign this call result before passing it on")
        if len(args) != len(fn_def.params):
            raise self.err(
                e, f"{e.func} takes {len(fn_def.params)} arguments, got {len(args)}"
            )
        sig = tuple(_sig_of(a) for a in args)
        key = (e.func, sig)
        frag = self.c.specializations.get(key)
        if frag is None:
            self.c.in_progress.add(e.func)
            table = SymbolTable()
            param_slots: list[int] = []
            for pname, a in zip(fn_def.params, args):
                binding = self._param_binding(a, pname)
                table.bind(pname, binding)
                param_slots.extend(_binding_slots(binding))
            frag = PlanFunction(e.func, sig, tuple(param_slots))
            sub = _FuncCompiler(self.c, table, e.func)
            frag.body = sub.compile_block(fn_def.body)
            frag.returns = sub.return_desc or ("none",)
            self.c.in_progress.discard(e.func)
            self.c.specializations[key] = frag
            self.c.spec_order.append(frag)
        leaf_args = tuple(_leaf_exprs_args(args))
        call = CallUser(frag, leaf_args, frag.param_slots)
        ret = frag.returns
        if ret[0] == "scalar":
            return CScalar(call, ret[1])
        if ret[0] == "object":
            return CObject(ret[1], ret[2], call)
        if ret[0] == "tuple":
            return CTupleCall(call, ret[1])
        return CVoid(call)

    def _param_binding(self, a: CV, hint: str) -> Binding:
        if isinstance(a, CScalar):
            return ScalarBinding(a.stype, self.c.alloc(hint))
        if isinstance(a, CObject):
            return ObjectBinding(a.schema, a.prefix, self.c.alloc(hint))
        return TupleBinding(
            tuple(self._param_binding(x, f"{hint}.{i}") for i, x in enumerate(a.items))
        )


def _is_union(cv: CV) -> bool:
    return isinstance(cv, CObject) and isinstance(cv.schema, Union)


def _sig_of(a: CV) -> tuple:
    if isinstance(a, CScalar):
        return ("s", a.stype)
    if isinstance(a, CObject):
        return ("o", a.schema, a.prefix)
    return ("t", tuple(_sig_of(x) for x in a.items))


def _leaf_exprs(cv: CV) -> list[Expr]:
    if isinstance(cv, CScalar):
        return [cv.expr]
    if isinstance(cv, CObject):
        return [cv.index]
    if isinstance(cv, CTuple):
        out: list[Expr] = []
        for item in cv.items:
            out.extend(_leaf_exprs(item))
        return out
    return [cv.expr]


def _leaf_exprs_args(args: list[CV]) -> list[Expr]:
    out: list[Expr] = []
    for a in args:
        out.extend(_leaf_exprs(a))
    return out


def _project_tuple(base: Expr, descs: tuple) -> tuple[CV, ...]:
    items: list[CV] = []
    for i, d in enumerate(descs):
        proj = TupleItem(base, i)
        if d[0] == "scalar":
            items.append(CScalar(proj, d[1]))
        elif d[0] == "object":
            items.append(CObject(d[1], d[2], proj))
        else:
            items.append(CTuple(_project_tuple(proj, d[1])))
    return tuple(items)


def _tuple_return(cv: CTuple, fc: _FuncCompiler, node) -> tuple[tuple, tuple[Expr, ...]]:
    descs: list[tuple] = []
    exprs: list[Expr] = []
    for item in cv.items:
        if isinstance(item, CScalar):
            descs.append(("scalar", item.stype))
            exprs.append(item.expr)
        elif isinstance(item, CObject):
            descs.append(("object", item.schema, item.prefix))
            exprs.append(item.index)
        elif isinstance(item, CTuple):
            d, x = _tuple_return(item, fc, node)
            descs.append(("tuple", d))
            exprs.append(TupleMake(x))
        else:
            raise fc.err(node, "cannot return this call result inside a tuple")
    return tuple(descs), tuple(exprs)


# ------------------------------------------------------------------ optimizer


def eliminate_zero_lookups(plan: TypedPlan) -> TypedPlan:
    """Replace list-offset reads at literal index 0 with the literal 0.

    The first element of every list-offset array is zero, and the outermost
    offset array is only ever read there; a schema-unaware backend cannot
    know either fact.
    """
    roles = plan.column_roles
    changed = True

    def repl(item):
        nonlocal changed
        if (
            isinstance(item, (ArrayRead, CheckedArrayRead))
            and isinstance(item.index, Const)
            and item.index.value == 0
            and roles.get(item.column) is RoleKind.LIST_OFFSET
        ):
            changed = True
            return Const(0)
        return None

    def rewrite(node: PlanNode) -> None:
        for name in node._fields:
            val = getattr(node, name)
            if isinstance(val, PlanNode):
                new = repl(val)
                if new is not None:
                    setattr(node, name, new)
                else:
                    rewrite(val)
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, PlanNode):
                        new = repl(item)
                        if new is not None:
                            val[i] = new
                        else:
                            rewrite(item)
            elif isinstance(val, tuple):
                rebuilt = []
                changed = False
                for item in val:
                    new = repl(item) if isinstance(item, PlanNode) else None
                    if new is not None:
                        rebuilt.append(new)
                        changed = True
                    else:
                        if isinstance(item, PlanNode):
                            rewrite(item)
                        rebuilt.append(item)
                if changed:
                    setattr(node, name, tuple(rebuilt))
            elif isinstance(val, dict):
                for key, item in val.items():
                    if isinstance(item, PlanNode):
                        new = repl(item)
                        if new is not None:
                            val[key] = new
                        else:
                            rewrite(item)
                    elif isinstance(item, list):
                        for j, sub in enumerate(item):
                            if isinstance(sub, PlanNode):
                                new = repl(sub)
                                if new is not None:
                                    item[j] = new
                                else:
                                    rewrite(sub)

    # Eliminations expose new ones (an offset read whose index just became a
    # literal 0), so iterate to a fixed point.
    while changed:
        changed = False
        for top in list(plan.body) + [s for f in plan.functions for s in f.body]:
            rewrite(top)
    return _with_columns(plan)


def flatten_loops(plan: TypedPlan) -> TypedPlan:
    """Collapse nested loops that exhaustively walk list contents into one
    loop over the innermost data. Valid because offsets are monotone, so
    the concatenation of [off[a], off[a+1]) over consecutive a is one
    contiguous range; the emitted sequence is unchanged."""

    def flatten_list(stmts: list[Stmt]) -> list[Stmt]:
        return [flatten_stmt(s) for s in stmts]

    def flatten_stmt(s: Stmt) -> Stmt:
        if isinstance(s, (RangeLoop, EventLoop)):
            body = flatten_list(s.body)
            s = type(s)(s.slot, s.lo, s.hi, body)
            while True:
                collapsed = _try_collapse(s, plan)
                if collapsed is None:
                    return s
                s = collapsed
        if isinstance(s, IfOp):
            return IfOp(s.cond, flatten_list(s.body), flatten_list(s.orelse))
        if isinstance(s, BranchStmt):
            s.arms = {t: flatten_list(arm) for t, arm in s.arms.items()}
            return s
        return s

    plan.body = flatten_list(plan.body)
    for fn in plan.functions:
        fn.body = flatten_list(fn.body)
    top = plan.body
    plan.event_granular = (
        len(top) == 1 and isinstance(top[0], EventLoop) and top[0].slot == plan.event_slot
    )
    return _with_columns(plan)


def _offset_chain(e: Expr) -> tuple[list[tuple[type, str]], Expr]:
    chain: list[tuple[type, str]] = []
    while isinstance(e, (ArrayRead, CheckedArrayRead)):
        chain.append((type(e), e.column))
        e = e.index
    return chain, e


def _rebuild_chain(chain: list[tuple[type, str]], root: Expr) -> Expr:
    expr = root
    for cls, col in reversed(chain):
        expr = cls(col, expr)
    return expr


def _try_collapse(outer: RangeLoop | EventLoop, plan: TypedPlan) -> Stmt | None:
    if len(outer.body) != 1 or not isinstance(outer.body[0], RangeLoop):
        return None
    inner: RangeLoop = outer.body[0]
    chain_lo, root_lo = _offset_chain(inner.lo)
    chain_hi, root_hi = _offset_chain(inner.hi)
    if not chain_lo or chain_lo != chain_hi:
        return None
    if any(plan.column_roles.get(col) is not RoleKind.LIST_OFFSET for _, col in chain_lo):
        return None
    a = outer.slot
    if not (isinstance(root_lo, SlotRef) and root_lo.slot == a):
        return None
    if not (
        isinstance(root_hi, Arith)
        and root_hi.op == "+"
        and isinstance(root_hi.left, SlotRef)
        and root_hi.left.slot == a
        and isinstance(root_hi.right, Const)
        and root_hi.right.value == 1
    ):
        return None
    for stmt in inner.body:
        for node in walk(stmt):
            if isinstance(node, SlotRef) and node.slot == a:
                return None
            if isinstance(node, (AssignSlot, RangeLoop, EventLoop)) and node.slot == a:
                return None
            if isinstance(outer, EventLoop) and isinstance(node, ReturnOp):
                return None
    lo = _rebuild_chain(chain_lo, outer.lo)
    hi = _rebuild_chain(chain_lo, outer.hi)
    cls = EventLoop if isinstance(outer, EventLoop) else RangeLoop
    return cls(inner.slot, lo, hi, inner.body)


def compile_query(
    source: str | Q.Program,
    dataset_schema: Schema,
    prefix: str,
    options: Options | None = None,
) -> TypedPlan:
    """Compile PQ source against a dataset schema into a TypedPlan.

    The dataset schema is the outer List of per-event values; the entry
    function's parameter is bound to one element of it. Raises CompileError
    (with a source position) for any construct that cannot be rewritten.
    """
    program = Q.parse(source) if isinstance(source, str) else source
    return Compiler(program, dataset_schema, prefix, options or Options()).compile()


def explain(plan: TypedPlan) -> str:
    from .plan import render_plan

    return render_plan(plan)
