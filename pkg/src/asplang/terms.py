"""Process terms: abstract syntax, substitution, and evaluation contexts.

Terms are immutable values (frozen dataclasses); every operation here is a
pure function, so terms can be shared freely between threads and reused as
dictionary keys.  Source spans are carried on process nodes for diagnostics
but are excluded from equality and hashing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

Span = tuple[int, int]


def _span_field():
    return field(default=None, compare=False, repr=False)


# ---------------------------------------------------------------------------
# Endpoints

POLARITIES = ("+", "-")


def dual_polarity(p: str) -> str:
    return "-" if p == "+" else "+"


@dataclass(frozen=True, slots=True)
class Var:
    """A name standing for a channel endpoint (bound by accept/request/catch)."""

    name: str


@dataclass(frozen=True, slots=True)
class Chan:
    """A runtime channel endpoint: fresh id plus polarity ('+' or '-')."""

    cid: int
    pol: str

    def dual(self) -> "Chan":
        return Chan(self.cid, dual_polarity(self.pol))


Endpoint = Union[Var, Chan]


# ---------------------------------------------------------------------------
# Expressions

@dataclass(frozen=True, slots=True)
class IntLit:
    value: int


@dataclass(frozen=True, slots=True)
class BoolLit:
    value: bool


@dataclass(frozen=True, slots=True)
class StrLit:
    value: str


@dataclass(frozen=True, slots=True)
class VarRef:
    name: str


@dataclass(frozen=True, slots=True)
class BinOp:
    """Binary operator: '+', '-', '/' (integer division), '=', '&&'."""

    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[IntLit, BoolLit, StrLit, VarRef, BinOp]


# ---------------------------------------------------------------------------
# Processes

@dataclass(frozen=True, slots=True)
class Request:
    service: str
    binder: str
    body: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class Accept:
    service: str
    binder: str
    body: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class ReplAccept:
    service: str
    binder: str
    body: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class Located:
    """A transparent location; `ann` counts the active session endpoints inside."""

    loc: str
    ann: int
    body: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class ProcVar:
    name: str
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class Update:
    """Adaptation routine for location `loc`.

    `var` is the process variable the body abstracts over (None when the body
    does not mention one); it is bound by this node.
    """

    loc: str
    var: Optional[str]
    body: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class Send:
    ep: Endpoint
    payloads: tuple[Expr, ...]
    cont: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class RecvBinder:
    name: str
    sort: Optional[str] = None  # 'int' | 'bool' | 'str', None when unannotated


@dataclass(frozen=True, slots=True)
class Recv:
    ep: Endpoint
    binders: tuple[RecvBinder, ...]
    cont: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class Throw:
    ep: Endpoint
    delegated: Endpoint
    cont: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class Catch:
    ep: Endpoint
    binder: str
    cont: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class Branch:
    ep: Endpoint
    arms: tuple[tuple[str, "Process"], ...]  # labels pairwise distinct
    span: Optional[Span] = _span_field()

    def arm(self, label: str) -> Optional["Process"]:
        for lab, p in self.arms:
            if lab == label:
                return p
        return None


@dataclass(frozen=True, slots=True)
class Select:
    ep: Endpoint
    label: str
    cont: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class Par:
    left: "Process"
    right: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class If:
    cond: Expr
    then: "Process"
    els: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class Close:
    ep: Endpoint
    cont: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class Restrict:
    """Binds both polarities of channel id `cid` in `body`."""

    cid: int
    body: "Process"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True, slots=True)
class Inaction:
    span: Optional[Span] = _span_field()


Process = Union[
    Request, Accept, ReplAccept, Located, ProcVar, Update, Send, Recv,
    Throw, Catch, Branch, Select, Par, If, Close, Restrict, Inaction,
]

NIL = Inaction()

# Prefix nodes whose `ep` field is the communication subject.
SUBJECT_NODES = (Send, Recv, Throw, Catch, Branch, Select, Close)


# ---------------------------------------------------------------------------
# Free occurrence computations

def free_channels(p: Process) -> set[Chan]:
    """Polarized channel endpoints occurring free (not under their restriction)."""
    out: set[Chan] = set()

    def ep(e: Endpoint, bound: frozenset[int]):
        if isinstance(e, Chan) and e.cid not in bound:
            out.add(e)

    def go(n: Process, bound: frozenset[int]):
        if isinstance(n, (Request, Accept, ReplAccept)):
            go(n.body, bound)
        elif isinstance(n, Located):
            go(n.body, bound)
        elif isinstance(n, Update):
            go(n.body, bound)
        elif isinstance(n, Send):
            ep(n.ep, bound)
            go(n.cont, bound)
        elif isinstance(n, Recv):
            ep(n.ep, bound)
            go(n.cont, bound)
        elif isinstance(n, Throw):
            ep(n.ep, bound)
            ep(n.delegated, bound)
            go(n.cont, bound)
        elif isinstance(n, Catch):
            ep(n.ep, bound)
            go(n.cont, bound)
        elif isinstance(n, Branch):
            ep(n.ep, bound)
            for _, q in n.arms:
                go(q, bound)
        elif isinstance(n, Select):
            ep(n.ep, bound)
            go(n.cont, bound)
        elif isinstance(n, Par):
            go(n.left, bound)
            go(n.right, bound)
        elif isinstance(n, If):
            go(n.then, bound)
            go(n.els, bound)
        elif isinstance(n, Close):
            ep(n.ep, bound)
            go(n.cont, bound)
        elif isinstance(n, Restrict):
            go(n.body, bound | {n.cid})

    go(p, frozenset())
    return out


def free_service_names(p: Process) -> set[str]:
    out: set[str] = set()

    def go(n: Process):
        if isinstance(n, (Request, Accept, ReplAccept)):
            out.add(n.service)
            go(n.body)
        elif isinstance(n, (Located, Update, Restrict)):
            go(n.body)
        elif isinstance(n, (Send, Recv, Throw, Catch, Select, Close)):
            go(n.cont)
        elif isinstance(n, Branch):
            for _, q in n.arms:
                go(q)
        elif isinstance(n, Par):
            go(n.left)
            go(n.right)
        elif isinstance(n, If):
            go(n.then)
            go(n.els)

    go(p)
    return out


def free_process_vars(p: Process) -> set[str]:
    out: set[str] = set()

    def go(n: Process, bound: frozenset[str]):
        if isinstance(n, ProcVar):
            if n.name not in bound:
                out.add(n.name)
        elif isinstance(n, Update):
            go(n.body, bound | ({n.var} if n.var else set()))
        elif isinstance(n, (Request, Accept, ReplAccept, Located, Restrict)):
            go(n.body, bound)
        elif isinstance(n, (Send, Recv, Throw, Catch, Select, Close)):
            go(n.cont, bound)
        elif isinstance(n, Branch):
            for _, q in n.arms:
                go(q, bound)
        elif isinstance(n, Par):
            go(n.left, bound)
            go(n.right, bound)
        elif isinstance(n, If):
            go(n.then, bound)
            go(n.els, bound)

    go(p, frozenset())
    return out


def free_endpoint_vars(p: Process) -> set[str]:
    """Names occurring free in endpoint position (subjects and throw objects)."""
    out: set[str] = set()

    def ep(e: Endpoint, bound: frozenset[str]):
        if isinstance(e, Var) and e.name not in bound:
            out.add(e.name)

    def go(n: Process, bound: frozenset[str]):
        if isinstance(n, (Request, Accept, ReplAccept)):
            go(n.body, bound | {n.binder})
        elif isinstance(n, (Located, Update)):
            go(n.body, bound)
        elif isinstance(n, Send):
            ep(n.ep, bound)
            go(n.cont, bound)
        elif isinstance(n, Recv):
            ep(n.ep, bound)
            go(n.cont, bound)
        elif isinstance(n, Throw):
            ep(n.ep, bound)
            ep(n.delegated, bound)
            go(n.cont, bound)
        elif isinstance(n, Catch):
            ep(n.ep, bound)
            go(n.cont, bound | {n.binder})
        elif isinstance(n, Branch):
            ep(n.ep, bound)
            for _, q in n.arms:
                go(q, bound)
        elif isinstance(n, Select):
            ep(n.ep, bound)
            go(n.cont, bound)
        elif isinstance(n, Par):
            go(n.left, bound)
            go(n.right, bound)
        elif isinstance(n, If):
            go(n.then, bound)
            go(n.els, bound)
        elif isinstance(n, Close):
            ep(n.ep, bound)
            go(n.cont, bound)
        elif isinstance(n, Restrict):
            go(n.body, bound)

    go(p, frozenset())
    return out


def free_expr_vars(p: Process) -> set[str]:
    """Expression variables occurring free (not bound by a receive)."""
    out: set[str] = set()

    def ex(e: Expr, bound: frozenset[str]):
        if isinstance(e, VarRef):
            if e.name not in bound:
                out.add(e.name)
        elif isinstance(e, BinOp):
            ex(e.left, bound)
            ex(e.right, bound)

    def go(n: Process, bound: frozenset[str]):
        if isinstance(n, (Request, Accept, ReplAccept, Located, Update, Restrict)):
            go(n.body, bound)
        elif isinstance(n, Send):
            for e in n.payloads:
                ex(e, bound)
            go(n.cont, bound)
        elif isinstance(n, Recv):
            go(n.cont, bound | {b.name for b in n.binders})
        elif isinstance(n, (Throw, Catch, Select, Close)):
            go(n.cont, bound)
        elif isinstance(n, Branch):
            for _, q in n.arms:
                go(q, bound)
        elif isinstance(n, Par):
            go(n.left, bound)
            go(n.right, bound)
        elif isinstance(n, If):
            ex(n.cond, bound)
            go(n.then, bound)
            go(n.els, bound)

    go(p, frozenset())
    return out


def all_channel_ids(p: Process) -> set[int]:
    """Every channel id occurring anywhere, bound or free."""
    out: set[int] = set()

    def ep(e: Endpoint):
        if isinstance(e, Chan):
            out.add(e.cid)

    def go(n: Process):
        if isinstance(n, (Request, Accept, ReplAccept, Located, Update)):
            go(n.body)
        elif isinstance(n, Send):
            ep(n.ep)
            go(n.cont)
        elif isinstance(n, Recv):
            ep(n.ep)
            go(n.cont)
        elif isinstance(n, Throw):
            ep(n.ep)
            ep(n.delegated)
            go(n.cont)
        elif isinstance(n, Catch):
            ep(n.ep)
            go(n.cont)
        elif isinstance(n, Branch):
            ep(n.ep)
            for _, q in n.arms:
                go(q)
        elif isinstance(n, Select):
            ep(n.ep)
            go(n.cont)
        elif isinstance(n, Par):
            go(n.left)
            go(n.right)
        elif isinstance(n, If):
            go(n.then)
            go(n.els)
        elif isinstance(n, Close):
            ep(n.ep)
            go(n.cont)
        elif isinstance(n, Restrict):
            out.add(n.cid)
            go(n.body)

    go(p)
    return out


def max_channel_id(p: Process) -> int:
    ids = all_channel_ids(p)
    return max(ids) if ids else -1


# ---------------------------------------------------------------------------
# Substitution

def subst_endpoint(p: Process, name: str, chan: Chan) -> Process:
    """Replace free occurrences of endpoint variable `name` by `chan`.

    Capture is impossible: endpoint binders bind names, never channels.
    """

    def ep(e: Endpoint) -> Endpoint:
        if isinstance(e, Var) and e.name == name:
            return chan
        return e

    def go(n: Process) -> Process:
        if isinstance(n, (Request, Accept, ReplAccept)):
            if n.binder == name:
                return n
            return type(n)(n.service, n.binder, go(n.body))
        if isinstance(n, Located):
            return Located(n.loc, n.ann, go(n.body))
        if isinstance(n, Update):
            return Update(n.loc, n.var, go(n.body))
        if isinstance(n, Send):
            return Send(ep(n.ep), n.payloads, go(n.cont))
        if isinstance(n, Recv):
            return Recv(ep(n.ep), n.binders, go(n.cont))
        if isinstance(n, Throw):
            return Throw(ep(n.ep), ep(n.delegated), go(n.cont))
        if isinstance(n, Catch):
            if n.binder == name:
                return Catch(ep(n.ep), n.binder, n.cont)
            return Catch(ep(n.ep), n.binder, go(n.cont))
        if isinstance(n, Branch):
            return Branch(ep(n.ep), tuple((lab, go(q)) for lab, q in n.arms))
        if isinstance(n, Select):
            return Select(ep(n.ep), n.label, go(n.cont))
        if isinstance(n, Par):
            return Par(go(n.left), go(n.right))
        if isinstance(n, If):
            return If(n.cond, go(n.then), go(n.els))
        if isinstance(n, Close):
            return Close(ep(n.ep), go(n.cont))
        if isinstance(n, Restrict):
            return Restrict(n.cid, go(n.body))
        return n

    return go(p)


def subst_values(p: Process, env: dict[str, Expr]) -> Process:
    """Replace free expression variables by constant expressions."""

    def ex(e: Expr, env: dict[str, Expr]) -> Expr:
        if isinstance(e, VarRef):
            return env.get(e.name, e)
        if isinstance(e, BinOp):
            return BinOp(e.op, ex(e.left, env), ex(e.right, env))
        return e

    def go(n: Process, env: dict[str, Expr]) -> Process:
        if not env:
            return n
        if isinstance(n, (Request, Accept, ReplAccept)):
            inner = {k: v for k, v in env.items() if k != n.binder}
            return type(n)(n.service, n.binder, go(n.body, inner))
        if isinstance(n, Located):
            return Located(n.loc, n.ann, go(n.body, env))
        if isinstance(n, Update):
            return Update(n.loc, n.var, go(n.body, env))
        if isinstance(n, Send):
            return Send(n.ep, tuple(ex(e, env) for e in n.payloads), go(n.cont, env))
        if isinstance(n, Recv):
            inner = {k: v for k, v in env.items()
                     if k not in {b.name for b in n.binders}}
            return Recv(n.ep, n.binders, go(n.cont, inner))
        if isinstance(n, Throw):
            return Throw(n.ep, n.delegated, go(n.cont, env))
        if isinstance(n, Catch):
            inner = {k: v for k, v in env.items() if k != n.binder}
            return Catch(n.ep, n.binder, go(n.cont, inner))
        if isinstance(n, Branch):
            return Branch(n.ep, tuple((lab, go(q, env)) for lab, q in n.arms))
        if isinstance(n, Select):
            return Select(n.ep, n.label, go(n.cont, env))
        if isinstance(n, Par):
            return Par(go(n.left, env), go(n.right, env))
        if isinstance(n, If):
            return If(ex(n.cond, env), go(n.then, env), go(n.els, env))
        if isinstance(n, Close):
            return Close(n.ep, go(n.cont, env))
        if isinstance(n, Restrict):
            return Restrict(n.cid, go(n.body, env))
        return n

    return go(p, dict(env))


def subst_procvar(u: Process, var: Optional[str], q: Process) -> Process:
    """Replace every free occurrence of process variable `var` in `u` by `q`.

    Nested updates binding the same variable shadow it.  `var=None` is the
    degenerate case of a body with no occurrences.
    """
    if var is None:
        return u

    def go(n: Process) -> Process:
        if isinstance(n, ProcVar):
            return q if n.name == var else n
        if isinstance(n, Update):
            if n.var == var:
                return n
            return Update(n.loc, n.var, go(n.body))
        if isinstance(n, (Request, Accept, ReplAccept)):
            return type(n)(n.service, n.binder, go(n.body))
        if isinstance(n, Located):
            return Located(n.loc, n.ann, go(n.body))
        if isinstance(n, Send):
            return Send(n.ep, n.payloads, go(n.cont))
        if isinstance(n, Recv):
            return Recv(n.ep, n.binders, go(n.cont))
        if isinstance(n, Throw):
            return Throw(n.ep, n.delegated, go(n.cont))
        if isinstance(n, Catch):
            return Catch(n.ep, n.binder, go(n.cont))
        if isinstance(n, Branch):
            return Branch(n.ep, tuple((lab, go(p2)) for lab, p2 in n.arms))
        if isinstance(n, Select):
            return Select(n.ep, n.label, go(n.cont))
        if isinstance(n, Par):
            return Par(go(n.left), go(n.right))
        if isinstance(n, If):
            return If(n.cond, go(n.then), go(n.els))
        if isinstance(n, Close):
            return Close(n.ep, go(n.cont))
        if isinstance(n, Restrict):
            return Restrict(n.cid, go(n.body))
        return n

    return go(u)


# ---------------------------------------------------------------------------
# Evaluation contexts
#
# A context is a spine of layers from the root down to a single hole.  The
# located layer mirrors the l[h]{ C | P } shape; parallel and restriction
# layers let decompositions reach through arbitrary active structure.

@dataclass(frozen=True, slots=True)
class CLoc:
    loc: str
    ann: int


@dataclass(frozen=True, slots=True)
class CParL:
    """Hole in the left component; `frame` is the right sibling."""

    frame: Process


@dataclass(frozen=True, slots=True)
class CParR:
    """Hole in the right component; `frame` is the left sibling."""

    frame: Process


@dataclass(frozen=True, slots=True)
class CRes:
    cid: int


Layer = Union[CLoc, CParL, CParR, CRes]
EvalContext = tuple[Layer, ...]

HOLE: EvalContext = ()


class AnnotationUnderflow(Exception):
    """A context adjustment would drive a location annotation negative."""


def plug(ctx: EvalContext, p: Process) -> Process:
    """Fill the hole of `ctx` with `p`, preserving annotations verbatim."""
    for layer in reversed(ctx):
        if isinstance(layer, CLoc):
            p = Located(layer.loc, layer.ann, p)
        elif isinstance(layer, CParL):
            p = Par(p, layer.frame)
        elif isinstance(layer, CParR):
            p = Par(layer.frame, p)
        else:
            p = Restrict(layer.cid, p)
    return p


def adjust_annotations(ctx: EvalContext, delta: int) -> EvalContext:
    """Shift every located layer on the spine by `delta`; frames untouched."""
    out: list[Layer] = []
    for layer in ctx:
        if isinstance(layer, CLoc):
            new = layer.ann + delta
            if new < 0:
                raise AnnotationUnderflow(
                    f"annotation of location {layer.loc!r} would become {new}")
            out.append(CLoc(layer.loc, new))
        else:
            out.append(layer)
    return tuple(out)


def decompose(p: Process) -> list[tuple[EvalContext, Process]]:
    """All ways of writing p = C{q} with q not a parallel/located/restriction.

    The traversal descends through transparent structure only, so each
    returned subterm is a prefix, conditional, update, process variable,
    branch, or inaction; `plug` reconstructs the input exactly.
    """
    out: list[tuple[EvalContext, Process]] = []

    def go(n: Process, ctx: list[Layer]):
        if isinstance(n, Par):
            ctx.append(CParL(n.right))
            go(n.left, ctx)
            ctx.pop()
            ctx.append(CParR(n.left))
            go(n.right, ctx)
            ctx.pop()
        elif isinstance(n, Located):
            ctx.append(CLoc(n.loc, n.ann))
            go(n.body, ctx)
            ctx.pop()
        elif isinstance(n, Restrict):
            ctx.append(CRes(n.cid))
            go(n.body, ctx)
            ctx.pop()
        else:
            out.append((tuple(ctx), n))

    go(p, [])
    return out


# Paths address active positions for the reduction engine: 'L'/'R' step into
# a parallel component, 'B' into a located body, 'S' under a restriction.
Path = tuple[str, ...]


def iter_active(p: Process) -> Iterator[tuple[Path, Process]]:
    """Yield (path, node) for every active position, located nodes included.

    Active positions are those reachable through parallel composition,
    located bodies, and restrictions; located nodes are yielded and then
    descended into (locations are transparent).
    """

    def go(n: Process, path: tuple[str, ...]):
        if isinstance(n, Par):
            yield from go(n.left, path + ("L",))
            yield from go(n.right, path + ("R",))
        elif isinstance(n, Located):
            yield path, n
            yield from go(n.body, path + ("B",))
        elif isinstance(n, Restrict):
            yield from go(n.body, path + ("S",))
        else:
            yield path, n

    yield from go(p, ())


def node_at(p: Process, path: Path) -> Process:
    for step in path:
        if step == "L":
            p = p.left  # type: ignore[union-attr]
        elif step == "R":
            p = p.right  # type: ignore[union-attr]
        else:  # 'B' or 'S'
            p = p.body  # type: ignore[union-attr]
    return p


def is_prefix(a: Path, b: Path) -> bool:
    return len(a) <= len(b) and b[: len(a)] == a
