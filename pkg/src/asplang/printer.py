"""Deterministic pretty-printer for processes, types, environments, programs.

Output is stable and parses back to the same AST: `parse(print(ast)) == ast`.
"""

from __future__ import annotations

from . import terms as T
from . import sessiontypes as S


# ---------------------------------------------------------------------------
# Expressions.  Precedence: && < = < +,- < /

_PREC = {"&&": 1, "=": 2, "+": 3, "-": 3, "/": 4}


def print_expr(e: T.Expr, parent_prec: int = 0) -> str:
    if isinstance(e, T.IntLit):
        return str(e.value)
    if isinstance(e, T.BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, T.StrLit):
        return '"' + e.value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(e, T.VarRef):
        return e.name
    prec = _PREC[e.op]
    left = print_expr(e.left, prec)
    right = print_expr(e.right, prec + 1)  # left-associative
    s = f"{left} {e.op} {right}"
    return f"({s})" if prec < parent_prec else s


def print_endpoint(ep: T.Endpoint) -> str:
    if isinstance(ep, T.Var):
        return ep.name
    return f"k#{ep.cid}{ep.pol}"


# ---------------------------------------------------------------------------
# Processes

def _cont(p: T.Process) -> str:
    """Continuation in prefix position: parenthesize a bare parallel."""
    s = print_process(p)
    if isinstance(p, T.Par):
        return f"({s})"
    return s


def print_process(p: T.Process) -> str:
    if isinstance(p, T.Inaction):
        return "0"
    if isinstance(p, T.Request):
        return f"request {p.service}({p.binder}). {_cont(p.body)}"
    if isinstance(p, T.Accept):
        return f"accept {p.service}({p.binder}). {_cont(p.body)}"
    if isinstance(p, T.ReplAccept):
        return f"accept* {p.service}({p.binder}). {_cont(p.body)}"
    if isinstance(p, T.Located):
        ann = f"@{p.ann}" if p.ann else ""
        return f"loc {p.loc}{ann} [ {print_process(p.body)} ]"
    if isinstance(p, T.ProcVar):
        return f"${p.name}"
    if isinstance(p, T.Update):
        return f"update {p.loc} {{ {print_process(p.body)} }}"
    if isinstance(p, T.Send):
        args = ", ".join(print_expr(e) for e in p.payloads)
        return f"send {print_endpoint(p.ep)}({args}). {_cont(p.cont)}"
    if isinstance(p, T.Recv):
        bs = ", ".join(b.name + (f": {b.sort}" if b.sort else "")
                       for b in p.binders)
        return f"recv {print_endpoint(p.ep)}({bs}). {_cont(p.cont)}"
    if isinstance(p, T.Throw):
        return (f"throw {print_endpoint(p.ep)}({print_endpoint(p.delegated)})."
                f" {_cont(p.cont)}")
    if isinstance(p, T.Catch):
        return f"catch {print_endpoint(p.ep)}({p.binder}). {_cont(p.cont)}"
    if isinstance(p, T.Branch):
        arms = " || ".join(f"{lab}: {print_process(q)}" for lab, q in p.arms)
        return f"case {print_endpoint(p.ep)} {{ {arms} }}"
    if isinstance(p, T.Select):
        return f"sel {print_endpoint(p.ep)}.{p.label}; {_cont(p.cont)}"
    if isinstance(p, T.Par):
        parts = []
        stack = [p]
        while stack:
            n = stack.pop()
            if isinstance(n, T.Par):
                stack.append(n.right)
                stack.append(n.left)
            else:
                parts.append(print_process(n))
        return " | ".join(parts)
    if isinstance(p, T.If):
        return (f"if {print_expr(p.cond)} then {_cont(p.then)}"
                f" else {_cont(p.els)}")
    if isinstance(p, T.Close):
        return f"close {print_endpoint(p.ep)}. {_cont(p.cont)}"
    if isinstance(p, T.Restrict):
        return f"new(k#{p.cid}) {_cont(p.body)}"
    raise TypeError(f"not a process: {p!r}")


# ---------------------------------------------------------------------------
# Types

def print_type(t: S.SessionType) -> str:
    if isinstance(t, S.TEnd):
        return "end"
    if isinstance(t, S.TSend):
        return f"!({', '.join(t.payload)}).{print_type(t.cont)}"
    if isinstance(t, S.TRecv):
        return f"?({', '.join(t.payload)}).{print_type(t.cont)}"
    if isinstance(t, S.TThrow):
        return f"!!({print_type(t.delegated)}).{print_type(t.cont)}"
    if isinstance(t, S.TCatch):
        return f"??({print_type(t.delegated)}).{print_type(t.cont)}"
    if isinstance(t, S.TBranch):
        arms = ", ".join(f"{lab}: {print_type(a)}" for lab, a in t.arms)
        return f"&{{{arms}}}"
    if isinstance(t, S.TSelect):
        arms = ", ".join(f"{lab}: {print_type(a)}" for lab, a in t.arms)
        return f"+{{{arms}}}"
    if isinstance(t, S.TMeta):
        return f"?T{t.uid}"
    raise TypeError(f"not a session type: {t!r}")


def print_interface(iface: S.Interface) -> str:
    if not iface.entries:
        return "{}"
    body = ", ".join(f"{n}: {print_type(t)} @ {m.render()}"
                     for n, t, m in iface.entries)
    return f"{{ {body} }}"


def print_typing(delta: dict) -> str:
    if not delta:
        return "{}"
    items = []
    for key in sorted(delta, key=lambda k: (isinstance(k, T.Chan), str(k))):
        entry = delta[key]
        s = f"{print_endpoint(key)}: {print_type(entry.type)}"
        items.append(f"[{s}]" if entry.bracketed else s)
    return "{ " + ", ".join(items) + " }"


def print_judgment(name: str, delta: dict, iface: S.Interface) -> str:
    return f"{name} |> {print_typing(delta)} ; {print_interface(iface)}"


# ---------------------------------------------------------------------------
# Programs

def print_program(sf) -> str:
    """Render a source file; type aliases and definition references have
    already been resolved, so the output is self-contained."""
    lines = []
    for name in sorted(sf.gamma.services):
        d = sf.gamma.services[name]
        lines.append(
            f"name {name} : <{print_type(d.accept_type)} {d.accept_qual}, "
            f"{print_type(d.request_type)} {d.request_qual}>;")
    for loc in sorted(sf.theta.locations):
        lines.append(
            f"locinterface {loc} : {print_interface(sf.theta.locations[loc])};")
    for pv in sorted(sf.theta.procvars):
        lines.append(
            f"procinterface ${pv} : {print_interface(sf.theta.procvars[pv])};")
    for name, proc in sf.defs:
        lines.append(f"proc {name} = {print_process(proc)};")
    lines.append(f"main = {print_process(sf.main)};")
    return "\n".join(lines) + "\n"
