"""Small-step reduction engine: redex enumeration, rule application,
annotation maintenance, schedulers, and trace recording.

Annotations count active session *endpoints* per location: opening a session
adds 2 to every location enclosing both participants and 1 to locations
enclosing exactly one of them; closing reverses this; delegating moves one
endpoint, so the sender's private locations lose 1 and the receiver's gain 1.
``recount_annotations`` recomputes every annotation from scratch and serves
as the oracle for the incrementally maintained counts.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import terms as T
from .congruence import tidy
from .printer import print_endpoint, print_expr, print_process

RULES = ("r:Open", "r:ROpen", "r:Upd", "r:I/O", "r:Pass", "r:Sel",
         "r:Close", "r:IfTr", "r:IfFa")
_RULE_ORDER = {r: i for i, r in enumerate(RULES)}


class EvalError(Exception):
    pass


class DivisionByZero(EvalError):
    pass


class TypeMismatch(EvalError):
    pass


class StuckRedex(Exception):
    """The supplied redex no longer matches the term (caller misuse)."""


def eval_expr(e: T.Expr):
    """Big-step evaluation of a closed expression to a Python constant.

    Arithmetic is exact; '/' is integer division and raises DivisionByZero
    on a zero divisor; ill-sorted operands raise TypeMismatch.
    """
    if isinstance(e, T.IntLit):
        return e.value
    if isinstance(e, T.BoolLit):
        return e.value
    if isinstance(e, T.StrLit):
        return e.value
    if isinstance(e, T.VarRef):
        raise TypeMismatch(f"unbound variable {e.name!r} in expression")
    left = eval_expr(e.left)
    right = eval_expr(e.right)
    op = e.op
    if op in ("+", "-", "/"):
        if not (type(left) is int and type(right) is int):
            raise TypeMismatch(f"operator {op!r} needs integer operands")
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if right == 0:
            raise DivisionByZero(f"{print_expr(e)} divides by zero")
        return left // right
    if op == "=":
        if type(left) is not type(right):
            raise TypeMismatch("comparison of differently sorted operands")
        return left == right
    if op == "&&":
        if not (type(left) is bool and type(right) is bool):
            raise TypeMismatch("'&&' needs boolean operands")
        return left and right
    raise TypeMismatch(f"unknown operator {op!r}")


def const_expr(value) -> T.Expr:
    if type(value) is bool:
        return T.BoolLit(value)
    if type(value) is int:
        return T.IntLit(value)
    return T.StrLit(value)


# ---------------------------------------------------------------------------
# Redexes

@dataclass(frozen=True)
class Redex:
    """A rule instance located by the paths of its participants.

    Two-party rules carry exactly two disjoint paths into the same term;
    the conditional rules carry one.
    """

    rule: str
    paths: tuple[T.Path, ...]
    nodes: tuple[T.Process, ...]
    label: Optional[str] = None  # selected label, for r:Sel
    detail: str = ""

    def summary(self) -> str:
        return f"{self.rule} {self.detail}".strip()


def _loc_path(p: T.Process, path: T.Path) -> str:
    """Location names on the spine above a position, for trace rendering."""
    names = []
    node = p
    for step in path:
        if isinstance(node, T.Located):
            names.append(node.loc)
        if step == "L":
            node = node.left
        elif step == "R":
            node = node.right
        else:
            node = node.body
    return "/".join(names) if names else "-"


def _payload_values(node: T.Send):
    return tuple(eval_expr(e) for e in node.payloads)


def enabled_redexes(p: T.Process) -> list[Redex]:
    """Every rule instance of p, up to structural congruence, in a fixed
    (rule, position) order.

    An update redex is produced only when the matched location carries
    annotation 0; a communication pair is produced only when both shapes are
    complementary (matching arities, offered label, dual polarities).
    """
    actives = list(T.iter_active(p))
    out: list[Redex] = []

    for path, node in actives:
        if isinstance(node, T.If):
            try:
                guard = eval_expr(node.cond)
            except EvalError:
                continue
            if type(guard) is not bool:
                continue
            rule = "r:IfTr" if guard else "r:IfFa"
            out.append(Redex(rule, (path,), (node,),
                             detail="true" if guard else "false"))

    for i, (path1, n1) in enumerate(actives):
        for path2, n2 in actives:
            if path1 == path2 or T.is_prefix(path1, path2) \
                    or T.is_prefix(path2, path1):
                continue
            red = _match_pair(path1, n1, path2, n2)
            if red is not None:
                out.append(red)

    out.sort(key=lambda r: (_RULE_ORDER[r.rule], r.paths))
    return out


def _match_pair(path1, n1, path2, n2) -> Optional[Redex]:
    # Session establishment: accept / replicated accept meets request.
    if isinstance(n1, T.Accept) and isinstance(n2, T.Request) \
            and n1.service == n2.service:
        return Redex("r:Open", (path1, path2), (n1, n2), detail=n1.service)
    if isinstance(n1, T.ReplAccept) and isinstance(n2, T.Request) \
            and n1.service == n2.service:
        return Redex("r:ROpen", (path1, path2), (n1, n2), detail=n1.service)
    # Update: location with no active sessions meets an update process.
    if isinstance(n1, T.Located) and isinstance(n2, T.Update) \
            and n1.loc == n2.loc and n1.ann == 0:
        return Redex("r:Upd", (path1, path2), (n1, n2), detail=n1.loc)
    # The remaining rules need dual runtime endpoints.
    ep1 = getattr(n1, "ep", None)
    ep2 = getattr(n2, "ep", None)
    if not (isinstance(ep1, T.Chan) and isinstance(ep2, T.Chan)):
        return None
    if ep1.cid != ep2.cid or ep1.pol == ep2.pol:
        return None
    cid = f"k#{ep1.cid}"
    if isinstance(n1, T.Send) and isinstance(n2, T.Recv):
        if len(n1.payloads) != len(n2.binders):
            return None
        try:
            vals = _payload_values(n1)
        except EvalError:
            return None
        rendered = ", ".join(print_expr(const_expr(v)) for v in vals)
        return Redex("r:I/O", (path1, path2), (n1, n2),
                     detail=f"{cid} ({rendered})")
    if isinstance(n1, T.Throw) and isinstance(n2, T.Catch):
        if not isinstance(n1.delegated, T.Chan):
            return None
        return Redex("r:Pass", (path1, path2), (n1, n2),
                     detail=f"{cid} <- {print_endpoint(n1.delegated)}")
    if isinstance(n1, T.Branch) and isinstance(n2, T.Select):
        if n2.label not in {lab for lab, _ in n1.arms}:
            return None
        return Redex("r:Sel", (path1, path2), (n1, n2), label=n2.label,
                     detail=f"{cid} {n2.label}")
    if isinstance(n1, T.Close) and isinstance(n2, T.Close) and path1 < path2:
        return Redex("r:Close", (path1, path2), (n1, n2), detail=cid)
    return None


# ---------------------------------------------------------------------------
# Rule application

def _rewrite(p, repl: dict, delta_of: Callable[[T.Path], int],
             restrict_at: Optional[T.Path], cid: Optional[int]):
    def go(n, path):
        if path in repl:
            return repl[path]
        if isinstance(n, T.Par):
            new = T.Par(go(n.left, path + ("L",)), go(n.right, path + ("R",)))
        elif isinstance(n, T.Located):
            d = delta_of(path)
            ann = n.ann + d
            if ann < 0:
                raise T.AnnotationUnderflow(
                    f"location {n.loc!r} annotation would become {ann}")
            new = T.Located(n.loc, ann, go(n.body, path + ("B",)))
        elif isinstance(n, T.Restrict):
            new = T.Restrict(n.cid, go(n.body, path + ("S",)))
        else:
            return n
        if path == restrict_at:
            new = T.Restrict(cid, new)
        return new

    return go(p, ())


def _enclosure_delta(path1: T.Path, path2: T.Path, d_one1: int, d_one2: int,
                     d_both: int) -> Callable[[T.Path], int]:
    def body_of(q):
        return q + ("B",)

    def delta(q: T.Path) -> int:
        enc1 = T.is_prefix(body_of(q), path1)
        enc2 = T.is_prefix(body_of(q), path2)
        if enc1 and enc2:
            return d_both
        if enc1:
            return d_one1
        if enc2:
            return d_one2
        return 0

    return delta


def _lca(path1: T.Path, path2: T.Path) -> T.Path:
    i = 0
    while i < len(path1) and i < len(path2) and path1[i] == path2[i]:
        i += 1
    return path1[:i]


def step(p: T.Process, r: Redex) -> T.Process:
    """Apply one reduction rule instance; pure in (p, r).

    Raises StuckRedex when r does not match p (stale redex).
    """
    try:
        nodes = tuple(T.node_at(p, path) for path in r.paths)
    except AttributeError:
        raise StuckRedex("redex paths no longer address the term") from None
    if nodes != r.nodes:
        raise StuckRedex("redex participants changed")

    zero = lambda _q: 0

    if r.rule in ("r:IfTr", "r:IfFa"):
        node = nodes[0]
        guard = eval_expr(node.cond)
        if (r.rule == "r:IfTr") != bool(guard):
            raise StuckRedex("conditional guard changed")
        return _rewrite(p, {r.paths[0]: node.then if guard else node.els},
                        zero, None, None)

    path1, path2 = r.paths
    n1, n2 = nodes

    if r.rule in ("r:Open", "r:ROpen"):
        fresh = T.max_channel_id(p) + 1
        plus, minus = T.Chan(fresh, "+"), T.Chan(fresh, "-")
        accept_body = T.subst_endpoint(n1.body, n1.binder, plus)
        if r.rule == "r:ROpen":
            accept_body = T.Par(accept_body, n1)
        repl = {path1: accept_body,
                path2: T.subst_endpoint(n2.body, n2.binder, minus)}
        delta = _enclosure_delta(path1, path2, 1, 1, 2)
        return _rewrite(p, repl, delta, _lca(path1, path2), fresh)

    if r.rule == "r:Upd":
        repl = {path1: T.subst_procvar(n2.body, n2.var, n1.body),
                path2: T.NIL}
        return _rewrite(p, repl, zero, None, None)

    if r.rule == "r:I/O":
        vals = _payload_values(n1)
        env = {b.name: const_expr(v) for b, v in zip(n2.binders, vals)}
        repl = {path1: n1.cont, path2: T.subst_values(n2.cont, env)}
        return _rewrite(p, repl, zero, None, None)

    if r.rule == "r:Pass":
        repl = {path1: n1.cont,
                path2: T.subst_endpoint(n2.cont, n2.binder, n1.delegated)}
        delta = _enclosure_delta(path1, path2, -1, +1, 0)
        return _rewrite(p, repl, delta, None, None)

    if r.rule == "r:Sel":
        repl = {path1: n1.arm(r.label), path2: n2.cont}
        return _rewrite(p, repl, zero, None, None)

    if r.rule == "r:Close":
        repl = {path1: n1.cont, path2: n2.cont}
        delta = _enclosure_delta(path1, path2, -1, -1, -2)
        return _rewrite(p, repl, delta, None, None)

    raise StuckRedex(f"unknown rule {r.rule!r}")


# ---------------------------------------------------------------------------
# Annotation recount oracle

def active_endpoints(p: T.Process) -> set[T.Chan]:
    """Channel endpoints with a pending occurrence inside p: subjects of any
    communication prefix plus delegation objects, at any depth, restriction
    binders notwithstanding.  Name subjects (sessions not yet established)
    do not count."""
    out: set[T.Chan] = set()

    def go(n):
        if isinstance(n, T.SUBJECT_NODES):
            if isinstance(n.ep, T.Chan):
                out.add(n.ep)
            if isinstance(n, T.Throw) and isinstance(n.delegated, T.Chan):
                out.add(n.delegated)
            if isinstance(n, T.Branch):
                for _, q in n.arms:
                    go(q)
            else:
                go(n.cont)
        elif isinstance(n, (T.Request, T.Accept, T.ReplAccept, T.Located,
                            T.Update, T.Restrict)):
            go(n.body)
        elif isinstance(n, T.Par):
            go(n.left)
            go(n.right)
        elif isinstance(n, T.If):
            go(n.then)
            go(n.els)

    go(p)
    return out


def recount_annotations(p: T.Process) -> T.Process:
    """Recompute every located annotation from scratch as the number of
    distinct active endpoints syntactically inside the location body."""

    def go(n):
        if isinstance(n, T.Located):
            body = go(n.body)
            return T.Located(n.loc, len(active_endpoints(body)), body)
        if isinstance(n, T.Par):
            return T.Par(go(n.left), go(n.right))
        if isinstance(n, (T.Request, T.Accept, T.ReplAccept)):
            return type(n)(n.service, n.binder, go(n.body))
        if isinstance(n, T.Update):
            return T.Update(n.loc, n.var, go(n.body))
        if isinstance(n, T.Restrict):
            return T.Restrict(n.cid, go(n.body))
        if isinstance(n, T.Branch):
            return T.Branch(n.ep, tuple((lab, go(q)) for lab, q in n.arms))
        if isinstance(n, T.If):
            return T.If(n.cond, go(n.then), go(n.els))
        if isinstance(n, (T.Send, T.Recv, T.Throw, T.Catch, T.Select, T.Close)):
            return _with_cont(n, go(n.cont))
        return n

    return go(p)


def _with_cont(n, cont):
    if isinstance(n, T.Send):
        return T.Send(n.ep, n.payloads, cont)
    if isinstance(n, T.Recv):
        return T.Recv(n.ep, n.binders, cont)
    if isinstance(n, T.Throw):
        return T.Throw(n.ep, n.delegated, cont)
    if isinstance(n, T.Catch):
        return T.Catch(n.ep, n.binder, cont)
    if isinstance(n, T.Select):
        return T.Select(n.ep, n.label, cont)
    return T.Close(n.ep, cont)


# ---------------------------------------------------------------------------
# Schedulers and runs

@dataclass(frozen=True)
class Scheduler:
    """Redex selection policy.

    * leftmost: first redex in the fixed rule-then-position order (a pure
      function of the term).
    * random: seeded uniform choice.
    * interactive: delegates to `chooser(redexes) -> index`.
    """

    policy: str = "leftmost"
    seed: int = 0
    chooser: Optional[Callable[[list[Redex]], int]] = None

    def make_picker(self) -> Callable[[list[Redex]], int]:
        if self.policy == "leftmost":
            return lambda redexes: 0
        if self.policy == "random":
            rng = random.Random(self.seed)
            return lambda redexes: rng.randrange(len(redexes))
        if self.policy == "interactive":
            if self.chooser is None:
                raise ValueError("interactive scheduler needs a chooser")
            return self.chooser
        raise ValueError(f"unknown scheduler policy {self.policy!r}")


@dataclass(frozen=True)
class TraceStep:
    index: int
    rule: str
    participant_locs: tuple[str, ...]
    summary: str
    result: T.Process


@dataclass
class ReductionTrace:
    initial: T.Process
    steps: list[TraceStep] = field(default_factory=list)
    scheduler_seed: int = 0
    status: str = "fuel-exhausted"  # 'terminated' | 'stuck' | 'fuel-exhausted'

    @property
    def final(self) -> T.Process:
        return self.steps[-1].result if self.steps else self.initial


def terminal_status(p: T.Process) -> Optional[str]:
    """'terminated' when only replicated accepts and empty locations remain,
    'stuck' when redexes are absent but pending work is not, None otherwise."""
    if enabled_redexes(p):
        return None
    for _, node in T.iter_active(p):
        if not isinstance(node, (T.Inaction, T.ReplAccept, T.Located)):
            return "stuck"
    return "terminated"


def run(p: T.Process, sched: Scheduler, fuel: int) -> ReductionTrace:
    """Reduce until no redex remains or fuel runs out, recording each step.

    The resulting trace replays deterministically: each recorded state is a
    pure function of the previous state and the chosen redex.
    """
    trace = ReductionTrace(initial=p, scheduler_seed=sched.seed)
    pick = sched.make_picker()
    state = p
    for index in range(fuel):
        redexes = enabled_redexes(state)
        if not redexes:
            break
        r = redexes[pick(redexes)]
        locs = tuple(_loc_path(state, path) for path in r.paths)
        state = tidy(step(state, r))
        trace.steps.append(TraceStep(index, r.rule, locs, r.summary(), state))
    status = terminal_status(state)
    trace.status = status if status else "fuel-exhausted"
    return trace


# ---------------------------------------------------------------------------
# Trace serialization: one line-delimited record per step

def render_trace(trace: ReductionTrace, include_terms: bool = False,
                 structured: bool = False) -> str:
    lines = []
    if structured:
        for s in trace.steps:
            rec = {"index": s.index, "rule": s.rule,
                   "at": list(s.participant_locs), "summary": s.summary}
            if include_terms:
                rec["term"] = print_process(s.result)
            lines.append(json.dumps(rec, sort_keys=True))
        lines.append(json.dumps({"status": trace.status,
                                 "steps": len(trace.steps)}, sort_keys=True))
    else:
        for s in trace.steps:
            line = f"[{s.index}] {s.summary} at {' & '.join(s.participant_locs)}"
            if include_terms:
                line += f" term= {print_process(s.result)}"
            lines.append(line)
        lines.append(f"# status={trace.status} steps={len(trace.steps)}")
    return "\n".join(lines) + "\n"
