"""The session type checker.

Checking is synthesis-directed: walking a process bottom-up reconstructs,
for every endpoint it uses, the exact protocol the process performs on it.
Receive binders therefore carry basic-type annotations.  Two mechanisms
bridge synthesis and declarations:

* selections synthesize *open* internal-choice rows that may widen when
  matched against a declared or dual type (a process that selects only
  `ok` still inhabits `+{fail: ..., ok: ...}`), and rows from different
  conditional or branch arms join by label union;
* the payload type of a delegation is a placeholder solved by unification
  when the delegating endpoint meets its declared type or its dual.

A located process types exactly as its body (locations are transparent);
its annotation must equal the number of active sessions of the body,
standard and bracketed entries alike, and its body's interface must not
exceed the interface declared for the location.  An update process types
only if its body is session-free, and contributes nothing itself.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import terms as T
from . import sessiontypes as S
from .printer import print_endpoint, print_type


class SessionTypeError(Exception):
    """A typing failure, tagged with a stable error code."""

    def __init__(self, code: str, message: str, node: T.Process | None = None):
        self.code = code
        self.node = node
        self.span = getattr(node, "span", None)
        super().__init__(f"{code}: {message}")


@dataclass
class _Ctx:
    gamma: S.NameEnv
    theta: S.LocEnv
    subst: dict  # meta uid -> SessionType


def _resolve(t: S.SessionType, subst: dict) -> S.SessionType:
    while isinstance(t, S.TMeta) and t.uid in subst:
        t = subst[t.uid]
    return t


def resolve_deep(t: S.SessionType, subst: dict) -> S.SessionType:
    t = _resolve(t, subst)
    if isinstance(t, (S.TSend, S.TRecv)):
        return type(t)(t.payload, resolve_deep(t.cont, subst))
    if isinstance(t, (S.TThrow, S.TCatch)):
        return type(t)(resolve_deep(t.delegated, subst),
                       resolve_deep(t.cont, subst))
    if isinstance(t, (S.TBranch, S.TSelect)):
        return type(t)(tuple((lab, resolve_deep(a, subst)) for lab, a in t.arms),
                       t.open_row)
    return t


def unify(a: S.SessionType, b: S.SessionType, subst: dict,
          node: T.Process | None = None) -> S.SessionType:
    """Merge two views of one protocol, solving placeholders and widening
    open selection rows; raises on structural disagreement."""
    a = _resolve(a, subst)
    b = _resolve(b, subst)
    if isinstance(a, S.TMeta):
        subst[a.uid] = b
        return b
    if isinstance(b, S.TMeta):
        subst[b.uid] = a
        return a
    if isinstance(a, S.TEnd) and isinstance(b, S.TEnd):
        return a
    if type(a) is type(b) and isinstance(a, (S.TSend, S.TRecv)):
        if a.payload != b.payload:
            raise SessionTypeError(
                "EndpointTypeMismatch",
                f"payload sorts differ: ({', '.join(a.payload)}) vs "
                f"({', '.join(b.payload)})", node)
        return type(a)(a.payload, unify(a.cont, b.cont, subst, node))
    if type(a) is type(b) and isinstance(a, (S.TThrow, S.TCatch)):
        return type(a)(unify(a.delegated, b.delegated, subst, node),
                       unify(a.cont, b.cont, subst, node))
    if type(a) is type(b) and isinstance(a, (S.TBranch, S.TSelect)):
        return _unify_arms(a, b, subst, node)
    raise SessionTypeError(
        "EndpointTypeMismatch",
        f"cannot reconcile {print_type(a)} with {print_type(b)}", node)


def _unify_arms(a, b, subst, node):
    la, lb = dict(a.arms), dict(b.arms)
    if not a.open_row and not b.open_row:
        if set(la) != set(lb):
            raise SessionTypeError(
                "EndpointTypeMismatch",
                f"label sets differ: {print_type(a)} vs {print_type(b)}", node)
    elif a.open_row and not b.open_row:
        if not set(la) <= set(lb):
            raise SessionTypeError(
                "EndpointTypeMismatch",
                f"labels {sorted(set(la) - set(lb))} not offered by "
                f"{print_type(b)}", node)
    elif b.open_row and not a.open_row:
        if not set(lb) <= set(la):
            raise SessionTypeError(
                "EndpointTypeMismatch",
                f"labels {sorted(set(lb) - set(la))} not offered by "
                f"{print_type(a)}", node)
    arms = []
    for lab in sorted(set(la) | set(lb)):
        if lab in la and lab in lb:
            arms.append((lab, unify(la[lab], lb[lab], subst, node)))
        else:
            arms.append((lab, la.get(lab, lb.get(lab))))
    return type(a)(tuple(arms), a.open_row and b.open_row)


def _expr_sort(e: T.Expr, locals_: dict, node) -> str:
    if isinstance(e, T.IntLit):
        return "int"
    if isinstance(e, T.BoolLit):
        return "bool"
    if isinstance(e, T.StrLit):
        return "str"
    if isinstance(e, T.VarRef):
        if e.name not in locals_:
            raise SessionTypeError("UnboundVariable",
                                   f"variable {e.name!r} is unbound", node)
        return locals_[e.name]
    lhs = _expr_sort(e.left, locals_, node)
    rhs = _expr_sort(e.right, locals_, node)
    if e.op in ("+", "-", "/"):
        if lhs != "int" or rhs != "int":
            raise SessionTypeError(
                "ExprSortMismatch", f"{e.op!r} needs int operands", node)
        return "int"
    if e.op == "=":
        if lhs != rhs:
            raise SessionTypeError(
                "ExprSortMismatch", "'=' compares equally sorted operands", node)
        return "bool"
    if lhs != "bool" or rhs != "bool":
        raise SessionTypeError("ExprSortMismatch", "'&&' needs bool operands",
                               node)
    return "bool"


def _require_used(delta: dict, key, node, what: str) -> S.TypingEntry:
    entry = delta.get(key)
    if entry is None:
        raise SessionTypeError(
            "LinearityViolation",
            f"endpoint {print_endpoint(key)} is {what} but its session is "
            "never closed afterwards", node)
    return entry


def _join_typings(d1: dict, d2: dict, subst: dict, node) -> dict:
    if set(d1) != set(d2):
        only = {print_endpoint(k) for k in set(d1) ^ set(d2)}
        raise SessionTypeError(
            "LinearityViolation",
            f"alternative continuations use different sessions: "
            f"{', '.join(sorted(only))}", node)
    out = {}
    for key, e1 in d1.items():
        e2 = d2[key]
        if e1.bracketed != e2.bracketed:
            raise SessionTypeError(
                "LinearityViolation",
                f"endpoint {print_endpoint(key)} restricted in only one arm",
                node)
        out[key] = S.TypingEntry(unify(e1.type, e2.type, subst, node),
                                 e1.bracketed)
    return out


def _check(ctx: _Ctx, theta: S.LocEnv, locals_: dict, p: T.Process):
    """Returns (delta, interface) for p."""
    if isinstance(p, T.Inaction):
        return {}, S.EMPTY_IFACE

    if isinstance(p, T.Par):
        d1, i1 = _check(ctx, theta, locals_, p.left)
        d2, i2 = _check(ctx, theta, locals_, p.right)
        overlap = set(d1) & set(d2)
        if overlap:
            names = ", ".join(sorted(print_endpoint(k) for k in overlap))
            raise SessionTypeError(
                "SharedEndpoint",
                f"parallel components share endpoints: {names}", p)
        return {**d1, **d2}, i1.merge(i2)

    if isinstance(p, T.If):
        if _expr_sort(p.cond, locals_, p) != "bool":
            raise SessionTypeError("ExprSortMismatch",
                                   "conditional guard must be bool", p)
        d1, i1 = _check(ctx, theta, locals_, p.then)
        d2, i2 = _check(ctx, theta, locals_, p.els)
        if i1 != i2:
            raise SessionTypeError(
                "InterfaceMismatch",
                "conditional arms declare different interfaces", p)
        return _join_typings(d1, d2, ctx.subst, p), i1

    if isinstance(p, (T.Accept, T.ReplAccept, T.Request)):
        decl = ctx.gamma.service(p.service)
        if decl is None:
            raise SessionTypeError("UnknownService",
                                   f"service {p.service!r} is not declared", p)
        delta, iface = _check(ctx, theta, locals_, p.body)
        key = T.Var(p.binder)
        entry = _require_used(delta, key, p, "opened here")
        delta = dict(delta)
        del delta[key]
        if isinstance(p, T.Request):
            unify(entry.type, decl.request_type, ctx.subst, p)
            return delta, iface.merge(
                S.Interface.of((p.service, decl.request_type, S.ONE)))
        if isinstance(p, T.Accept):
            if decl.accept_qual != "lin":
                raise SessionTypeError(
                    "QualifierMismatch",
                    f"plain accept on {p.service!r} needs a lin service", p)
        else:
            if decl.accept_qual != "un":
                raise SessionTypeError(
                    "QualifierMismatch",
                    f"replicated accept on {p.service!r} needs an un service", p)
            if delta:
                extra = ", ".join(sorted(print_endpoint(k) for k in delta))
                raise SessionTypeError(
                    "ReplicatedBodyActive",
                    f"replicated accept body may use only its own session, "
                    f"found: {extra}", p)
        unify(entry.type, decl.accept_type, ctx.subst, p)
        iface = iface.scale_inf() if isinstance(p, T.ReplAccept) else iface
        mult = S.INF if isinstance(p, T.ReplAccept) else S.ONE
        return delta, iface.merge(
            S.Interface.of((p.service, decl.accept_type, mult)))

    if isinstance(p, T.Send):
        sorts = tuple(_expr_sort(e, locals_, p) for e in p.payloads)
        delta, iface = _check(ctx, theta, locals_, p.cont)
        entry = _require_used(delta, p.ep, p, "used for sending")
        delta = dict(delta)
        delta[p.ep] = S.TypingEntry(S.TSend(sorts, entry.type), entry.bracketed)
        return delta, iface

    if isinstance(p, T.Recv):
        sorts = []
        for b in p.binders:
            if b.sort is None:
                raise SessionTypeError(
                    "CannotInfer",
                    f"receive binder {b.name!r} needs a type annotation", p)
            sorts.append(b.sort)
        inner = dict(locals_)
        inner.update({b.name: b.sort for b in p.binders})
        delta, iface = _check(ctx, theta, inner, p.cont)
        entry = _require_used(delta, p.ep, p, "used for receiving")
        delta = dict(delta)
        delta[p.ep] = S.TypingEntry(S.TRecv(tuple(sorts), entry.type),
                                    entry.bracketed)
        return delta, iface

    if isinstance(p, T.Throw):
        delta, iface = _check(ctx, theta, locals_, p.cont)
        if p.delegated in delta:
            raise SessionTypeError(
                "LinearityViolation",
                f"delegated endpoint {print_endpoint(p.delegated)} is still "
                "used after being thrown", p)
        entry = _require_used(delta, p.ep, p, "used for delegation")
        meta = S.fresh_meta()
        delta = dict(delta)
        delta[p.ep] = S.TypingEntry(S.TThrow(meta, entry.type), entry.bracketed)
        delta[p.delegated] = S.TypingEntry(meta)
        return delta, iface

    if isinstance(p, T.Catch):
        delta, iface = _check(ctx, theta, locals_, p.cont)
        key = T.Var(p.binder)
        caught = _require_used(delta, key, p, "caught here")
        delta = dict(delta)
        del delta[key]
        entry = _require_used(delta, p.ep, p, "used for catching")
        delta[p.ep] = S.TypingEntry(S.TCatch(caught.type, entry.type),
                                    entry.bracketed)
        return delta, iface

    if isinstance(p, T.Branch):
        arm_deltas = []
        iface = None
        for lab, q in p.arms:
            d, i = _check(ctx, theta, locals_, q)
            entry = _require_used(d, p.ep, p, f"offered on in arm {lab!r}")
            d = dict(d)
            del d[p.ep]
            arm_deltas.append((lab, entry, d))
            if iface is None:
                iface = i
            elif iface != i:
                raise SessionTypeError(
                    "InterfaceMismatch",
                    "branch arms declare different interfaces", p)
        joined = arm_deltas[0][2]
        for _, _, d in arm_deltas[1:]:
            joined = _join_typings(joined, d, ctx.subst, p)
        bracketed = arm_deltas[0][1].bracketed
        subject = S.branch([(lab, e.type) for lab, e, _ in arm_deltas])
        joined = dict(joined)
        joined[p.ep] = S.TypingEntry(subject, bracketed)
        return joined, iface

    if isinstance(p, T.Select):
        delta, iface = _check(ctx, theta, locals_, p.cont)
        entry = _require_used(delta, p.ep, p, "selected on")
        delta = dict(delta)
        delta[p.ep] = S.TypingEntry(
            S.TSelect(((p.label, entry.type),), open_row=True), entry.bracketed)
        return delta, iface

    if isinstance(p, T.Close):
        delta, iface = _check(ctx, theta, locals_, p.cont)
        if p.ep in delta:
            raise SessionTypeError(
                "LinearityViolation",
                f"endpoint {print_endpoint(p.ep)} is used again after close", p)
        delta = dict(delta)
        delta[p.ep] = S.TypingEntry(S.END)
        return delta, iface

    if isinstance(p, T.Restrict):
        delta, iface = _check(ctx, theta, locals_, p.body)
        plus, minus = T.Chan(p.cid, "+"), T.Chan(p.cid, "-")
        has_plus, has_minus = plus in delta, minus in delta
        if not has_plus and not has_minus:
            return delta, iface
        if has_plus != has_minus:
            present = plus if has_plus else minus
            raise SessionTypeError(
                "UnbalancedRestriction",
                f"restriction on k#{p.cid} finds only "
                f"{print_endpoint(present)}", p)
        delta = dict(delta)
        ep, em = delta.pop(plus), delta.pop(minus)
        try:
            resolved = unify(ep.type, S.dual(em.type), ctx.subst, p)
        except SessionTypeError as exc:
            raise SessionTypeError(
                "UnbalancedRestriction",
                f"endpoints of k#{p.cid} are not dual: {exc}", p) from None
        delta[plus] = S.TypingEntry(resolved, bracketed=True)
        delta[minus] = S.TypingEntry(S.dual(resolved), bracketed=True)
        return delta, iface

    if isinstance(p, T.Located):
        decl = theta.locations.get(p.loc)
        if decl is None:
            raise SessionTypeError("UnknownLocation",
                                   f"location {p.loc!r} is not declared", p)
        delta, iface = _check(ctx, theta, locals_, p.body)
        if p.ann != len(delta):
            raise SessionTypeError(
                "AnnotationMismatch",
                f"location {p.loc!r} is annotated {p.ann} but contains "
                f"{len(delta)} active session endpoint(s)", p)
        if not S.interface_leq(iface, decl):
            raise SessionTypeError(
                "InterfaceExceeded",
                f"body of location {p.loc!r} exceeds its declared interface",
                p)
        return delta, iface

    if isinstance(p, T.Update):
        decl = theta.locations.get(p.loc)
        if decl is None:
            raise SessionTypeError("UnknownLocation",
                                   f"location {p.loc!r} is not declared", p)
        inner_theta = theta.with_procvar(p.var, decl) if p.var else theta
        delta, _iface = _check(ctx, inner_theta, locals_, p.body)
        if delta:
            extra = ", ".join(sorted(print_endpoint(k) for k in delta))
            raise SessionTypeError(
                "UpdateBodyActive",
                f"update body for {p.loc!r} has active sessions: {extra}", p)
        return {}, S.EMPTY_IFACE

    if isinstance(p, T.ProcVar):
        iface = theta.procvars.get(p.name)
        if iface is None:
            raise SessionTypeError(
                "UnknownProcVar",
                f"process variable ${p.name} has no declared interface", p)
        return {}, iface

    raise SessionTypeError("Internal", f"unhandled process {p!r}", p)


def typecheck(gamma: S.NameEnv, theta: S.LocEnv, p: T.Process):
    """Type a process; returns (delta, interface) or raises SessionTypeError.

    The returned delta maps each free or restricted endpoint of p to its
    session type (restricted ones bracketed); the interface lists the
    services p declares or consumes, with multiplicities.
    """
    ctx = _Ctx(gamma, theta, {})
    delta, iface = _check(ctx, theta, dict(gamma.basics), p)
    resolved = {key: S.TypingEntry(resolve_deep(e.type, ctx.subst), e.bracketed)
                for key, e in delta.items()}
    return resolved, iface


def is_typable_standalone(sf, p: T.Process) -> bool:
    """A definition can be typed on its own only when it is closed with
    respect to endpoints, expression variables, and process variables."""
    return (not T.free_endpoint_vars(p)
            and not T.free_expr_vars(p)
            and T.free_process_vars(p) <= set(sf.theta.procvars))


def typecheck_program(sf):
    """Type every standalone-closed definition plus main.

    Returns an ordered dict name -> (delta, interface); raises on the first
    failure, tagged with the process name.
    """
    results = {}
    for name, body in sf.defs:
        if is_typable_standalone(sf, body):
            results[name] = typecheck(sf.gamma, sf.theta, body)
    results["main"] = typecheck(sf.gamma, sf.theta, sf.main)
    return results
