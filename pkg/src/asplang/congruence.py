"""Structural congruence: order-preserving cleanup and canonical normal forms.

The congruence axioms: parallel composition is associative and commutative
with unit 0; restrictions commute with each other and float over parallel
components and located boundaries (annotations unchanged, since moving a
binder moves no endpoint occurrences); restrictions whose channel no longer
occurs are garbage collected; restricted channel ids are renamed to a
canonical numbering by leftmost first occurrence.

Two entry points:

* ``tidy``      -- cheap cleanup used between reduction steps: flattens unit
                   parallels and drops dead restrictions, preserving the
                   left-to-right order of components.
* ``normalize`` -- full canonical form used for state identity; idempotent.
"""

from __future__ import annotations

from . import terms as T
from .printer import print_process


def _rebuild_par(parts: list[T.Process]) -> T.Process:
    if not parts:
        return T.NIL
    acc = parts[0]
    for q in parts[1:]:
        acc = T.Par(acc, q)
    return acc


def _map_children(n: T.Process, f) -> T.Process:
    if isinstance(n, (T.Request, T.Accept, T.ReplAccept)):
        return type(n)(n.service, n.binder, f(n.body))
    if isinstance(n, T.Located):
        return T.Located(n.loc, n.ann, f(n.body))
    if isinstance(n, T.Update):
        return T.Update(n.loc, n.var, f(n.body))
    if isinstance(n, T.Send):
        return T.Send(n.ep, n.payloads, f(n.cont))
    if isinstance(n, T.Recv):
        return T.Recv(n.ep, n.binders, f(n.cont))
    if isinstance(n, T.Throw):
        return T.Throw(n.ep, n.delegated, f(n.cont))
    if isinstance(n, T.Catch):
        return T.Catch(n.ep, n.binder, f(n.cont))
    if isinstance(n, T.Branch):
        return T.Branch(n.ep, tuple((lab, f(q)) for lab, q in n.arms))
    if isinstance(n, T.Select):
        return T.Select(n.ep, n.label, f(n.cont))
    if isinstance(n, T.If):
        return T.If(n.cond, f(n.then), f(n.els))
    if isinstance(n, T.Close):
        return T.Close(n.ep, f(n.cont))
    return n


def tidy(p: T.Process) -> T.Process:
    """Drop parallel units and dead restrictions everywhere, keeping order."""
    if isinstance(p, T.Par):
        parts = []
        for q in (tidy(p.left), tidy(p.right)):
            if isinstance(q, T.Par):
                stack = [q]
                while stack:
                    n = stack.pop()
                    if isinstance(n, T.Par):
                        stack.append(n.right)
                        stack.append(n.left)
                    elif not isinstance(n, T.Inaction):
                        parts.append(n)
            elif not isinstance(q, T.Inaction):
                parts.append(q)
        return _rebuild_par(parts)
    if isinstance(p, T.Restrict):
        body = tidy(p.body)
        if p.cid not in T.all_channel_ids(body):
            return body
        return T.Restrict(p.cid, body)
    return _map_children(p, tidy)


# ---------------------------------------------------------------------------
# Canonical normal form

def _rename_channels(p: T.Process, mapping: dict[int, int]) -> T.Process:
    def ep(e):
        if isinstance(e, T.Chan) and e.cid in mapping:
            return T.Chan(mapping[e.cid], e.pol)
        return e

    def go(n):
        if isinstance(n, T.Restrict):
            return T.Restrict(mapping.get(n.cid, n.cid), go(n.body))
        if isinstance(n, T.Send):
            return T.Send(ep(n.ep), n.payloads, go(n.cont))
        if isinstance(n, T.Recv):
            return T.Recv(ep(n.ep), n.binders, go(n.cont))
        if isinstance(n, T.Throw):
            return T.Throw(ep(n.ep), ep(n.delegated), go(n.cont))
        if isinstance(n, T.Catch):
            return T.Catch(ep(n.ep), n.binder, go(n.cont))
        if isinstance(n, T.Branch):
            return T.Branch(ep(n.ep), tuple((lab, go(q)) for lab, q in n.arms))
        if isinstance(n, T.Select):
            return T.Select(ep(n.ep), n.label, go(n.cont))
        if isinstance(n, T.Close):
            return T.Close(ep(n.ep), go(n.cont))
        if isinstance(n, T.Par):
            return T.Par(go(n.left), go(n.right))
        return _map_children(n, go)

    return go(p)


def _uniquify_bound(p: T.Process) -> T.Process:
    """Alpha-rename every restriction to a globally unique id so scope
    extrusion cannot capture."""
    counter = [T.max_channel_id(p) + 1]

    def go(n, mapping):
        if isinstance(n, T.Restrict):
            new = counter[0]
            counter[0] += 1
            inner = dict(mapping)
            inner[n.cid] = new
            return T.Restrict(new, go(n.body, inner))
        if isinstance(n, (T.Send, T.Recv, T.Throw, T.Catch, T.Branch,
                          T.Select, T.Close)):
            renamed = _rename_channels_shallow(n, mapping)
            return _map_children(renamed, lambda q: go(q, mapping))
        if isinstance(n, T.Par):
            return T.Par(go(n.left, mapping), go(n.right, mapping))
        return _map_children(n, lambda q: go(q, mapping))

    return go(p, {})


def _rename_channels_shallow(n: T.Process, mapping: dict[int, int]) -> T.Process:
    def ep(e):
        if isinstance(e, T.Chan) and e.cid in mapping:
            return T.Chan(mapping[e.cid], e.pol)
        return e

    if isinstance(n, T.Send):
        return T.Send(ep(n.ep), n.payloads, n.cont)
    if isinstance(n, T.Recv):
        return T.Recv(ep(n.ep), n.binders, n.cont)
    if isinstance(n, T.Throw):
        return T.Throw(ep(n.ep), ep(n.delegated), n.cont)
    if isinstance(n, T.Catch):
        return T.Catch(ep(n.ep), n.binder, n.cont)
    if isinstance(n, T.Branch):
        return T.Branch(ep(n.ep), n.arms)
    if isinstance(n, T.Select):
        return T.Select(ep(n.ep), n.label, n.cont)
    if isinstance(n, T.Close):
        return T.Close(ep(n.ep), n.cont)
    return n


def _structural(p: T.Process) -> T.Process:
    """One structural pass: flatten/sort parallels, hoist and GC restrictions,
    sort branch arms.  Channel ids are taken as given."""

    def go(n: T.Process) -> T.Process:
        if isinstance(n, T.Par):
            binders: list[int] = []
            parts: list[T.Process] = []
            queue = [go(n.left), go(n.right)]
            while queue:
                q = queue.pop(0)
                if isinstance(q, T.Restrict):
                    binders.append(q.cid)
                    queue.insert(0, q.body)
                elif isinstance(q, T.Par):
                    queue.insert(0, q.right)
                    queue.insert(0, q.left)
                elif not isinstance(q, T.Inaction):
                    parts.append(q)
            parts.sort(key=print_process)
            body = _rebuild_par(parts)
            for cid in reversed(_order_binders(binders, body)):
                body = T.Restrict(cid, body)
            return body
        if isinstance(n, T.Located):
            body = go(n.body)
            binders = []
            while isinstance(body, T.Restrict):
                binders.append(body.cid)
                body = body.body
            out: T.Process = T.Located(n.loc, n.ann, body)
            for cid in reversed(binders):
                out = T.Restrict(cid, out)
            return out
        if isinstance(n, T.Restrict):
            body = go(n.body)
            if n.cid not in T.all_channel_ids(body):
                return body
            inner: list[int] = []
            while isinstance(body, T.Restrict):
                inner.append(body.cid)
                body = body.body
            ordered = _order_binders([n.cid] + inner, body)
            for cid in reversed(ordered):
                body = T.Restrict(cid, body)
            return body
        if isinstance(n, T.Branch):
            return T.Branch(n.ep, tuple(sorted(((lab, go(q)) for lab, q in n.arms),
                                               key=lambda a: a[0])))
        return _map_children(n, go)

    return go(p)


def _order_binders(binders: list[int], body: T.Process) -> list[int]:
    """Commute adjacent restrictions into first-occurrence order, dropping
    those whose channel never occurs."""
    used = T.all_channel_ids(body)
    live = [cid for cid in binders if cid in used]
    order = _occurrence_order(body)
    pos = {cid: i for i, cid in enumerate(order)}
    live.sort(key=lambda cid: pos.get(cid, len(order)))
    return live


def _occurrence_order(p: T.Process) -> list[int]:
    seen: list[int] = []

    def note(cid):
        if cid not in seen:
            seen.append(cid)

    def ep(e):
        if isinstance(e, T.Chan):
            note(e.cid)

    def go(n):
        if isinstance(n, (T.Request, T.Accept, T.ReplAccept, T.Located, T.Update)):
            go(n.body)
        elif isinstance(n, T.Restrict):
            note(n.cid)
            go(n.body)
        elif isinstance(n, (T.Send, T.Recv, T.Select, T.Close, T.Catch)):
            ep(n.ep)
            go(n.cont)
        elif isinstance(n, T.Throw):
            ep(n.ep)
            ep(n.delegated)
            go(n.cont)
        elif isinstance(n, T.Branch):
            ep(n.ep)
            for _, q in n.arms:
                go(q)
        elif isinstance(n, T.Par):
            go(n.left)
            go(n.right)
        elif isinstance(n, T.If):
            go(n.then)
            go(n.els)

    go(p)
    return seen


def _renumber(p: T.Process) -> T.Process:
    """Rename bound channels to 0,1,2,... by first occurrence, skipping over
    ids that occur free (free channels are never renamed)."""
    free = {c.cid for c in T.free_channels(p)}
    bound_order = [cid for cid in _occurrence_order(p) if cid not in free]
    mapping = {}
    next_id = 0
    for cid in bound_order:
        while next_id in free:
            next_id += 1
        mapping[cid] = next_id
        next_id += 1
    if all(mapping[c] == c for c in mapping):
        return p
    # Rename through a disjoint intermediate range to avoid clashes.
    high = max(free | set(mapping) | set(mapping.values()), default=-1) + 1
    stage1 = {c: high + i for i, c in enumerate(mapping)}
    stage2 = {high + i: mapping[c] for i, c in enumerate(mapping)}
    return _rename_channels(_rename_channels(p, stage1), stage2)


def normalize(p: T.Process) -> T.Process:
    """Canonical representative of p's congruence class.

    Iterates structural sorting and channel renumbering to a fixed point;
    if the orbit cycles, the printed-least member is chosen, which keeps
    normalize idempotent.
    """
    seen: list[T.Process] = []
    cur = _structural(_uniquify_bound(p))
    while cur not in seen:
        seen.append(cur)
        cur = _structural(_renumber(cur))
    cycle = seen[seen.index(cur):]
    return min(cycle, key=print_process)


def congruent(p: T.Process, q: T.Process) -> bool:
    return normalize(p) == normalize(q)
