"""Executable metatheory: communication-error detection, bounded state-space
exploration, and harnesses for subject reduction, safety, and update
consistency.

States are identified by their canonical form (normalize), which renumbers
restricted channels; replicated-server systems with a fixed client
population therefore explore finitely.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from . import terms as T
from . import sessiontypes as S
from .checker import SessionTypeError, typecheck
from .congruence import normalize
from .engine import Redex, enabled_redexes, step
from .printer import print_process


def kappa_processes(p: T.Process, cid: int) -> list[tuple[T.EvalContext, T.Process]]:
    """Decompositions whose subterm's next action is on either polarity of
    channel `cid`."""
    out = []
    for ctx, sub in T.decompose(p):
        if isinstance(sub, T.SUBJECT_NODES) and isinstance(sub.ep, T.Chan) \
                and sub.ep.cid == cid:
            out.append((ctx, sub))
    return out


def is_kappa_redex(p1: T.Process, p2: T.Process) -> bool:
    """Do two processes acting on the same channel synchronize?

    Complementary shapes on dual polarities: send/receive with matching
    arities, throw/catch, branch with the selected label offered, or a
    close on each side.
    """
    for a, b in ((p1, p2), (p2, p1)):
        ea, eb = getattr(a, "ep", None), getattr(b, "ep", None)
        if not (isinstance(ea, T.Chan) and isinstance(eb, T.Chan)):
            continue
        if ea.cid != eb.cid or ea.pol == eb.pol:
            continue
        if isinstance(a, T.Send) and isinstance(b, T.Recv):
            return len(a.payloads) == len(b.binders)
        if isinstance(a, T.Throw) and isinstance(b, T.Catch):
            return True
        if isinstance(a, T.Branch) and isinstance(b, T.Select):
            return b.label in {lab for lab, _ in a.arms}
        if isinstance(a, T.Close) and isinstance(b, T.Close):
            return True
    return False


def is_error(p: T.Process) -> bool:
    """A configuration is an error when, up to structural congruence, some
    channel has exactly two pending processes that do not synchronize, or
    three or more pending processes.  A single orphan is not an error."""
    by_cid: dict[int, list[T.Process]] = {}
    for _, sub in T.decompose(p):
        if isinstance(sub, T.SUBJECT_NODES) and isinstance(sub.ep, T.Chan):
            by_cid.setdefault(sub.ep.cid, []).append(sub)
    for procs in by_cid.values():
        if len(procs) >= 3:
            return True
        if len(procs) == 2 and not is_kappa_redex(procs[0], procs[1]):
            return True
    return False


def kappa_redex_cids(p: T.Process) -> set[int]:
    """Channels for which p currently contains at least one redex pair."""
    by_cid: dict[int, list[T.Process]] = {}
    for _, sub in T.decompose(p):
        if isinstance(sub, T.SUBJECT_NODES) and isinstance(sub.ep, T.Chan):
            by_cid.setdefault(sub.ep.cid, []).append(sub)
    out = set()
    for cid, procs in by_cid.items():
        for i in range(len(procs)):
            for j in range(i + 1, len(procs)):
                if is_kappa_redex(procs[i], procs[j]):
                    out.add(cid)
                    break
            if cid in out:
                break
    return out


# ---------------------------------------------------------------------------
# Exploration

@dataclass
class Edge:
    src: int
    rule: str
    summary: str
    dst: int


@dataclass
class StateGraph:
    states: list[T.Process] = field(default_factory=list)
    keys: dict = field(default_factory=dict)  # canonical print -> index
    edges: list[Edge] = field(default_factory=list)
    root: int = 0
    truncated: bool = False
    depth: dict = field(default_factory=dict)

    def successors(self, idx: int) -> list[Edge]:
        return [e for e in self.edges if e.src == idx]


def explore(p: T.Process, max_states: int = 10000, max_depth: int = 1000,
            jobs: int = 1) -> StateGraph:
    """Breadth-first closure of normalize(step(-)) over all enabled redexes.

    States are deduplicated by canonical form.  Hitting a bound records
    truncated=True, never an exception.  Deterministic for fixed inputs.
    """
    g = StateGraph()
    root = normalize(p)
    g.states.append(root)
    g.keys[print_process(root)] = 0
    g.depth[0] = 0
    frontier = [0]
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        while frontier:
            nxt: list[int] = []
            for idx in frontier:
                state = g.states[idx]
                if g.depth[idx] >= max_depth:
                    g.truncated = True
                    continue
                redexes = enabled_redexes(state)

                def successor(r, state=state):
                    # Corrupted annotations can drive a location count
                    # negative; such a reduct is undefined, not an edge.
                    try:
                        return normalize(step(state, r))
                    except T.AnnotationUnderflow:
                        return None

                if pool is not None:
                    succs = list(pool.map(successor, redexes))
                else:
                    succs = [successor(r) for r in redexes]
                for r, succ in zip(redexes, succs):
                    if succ is None:
                        continue
                    key = print_process(succ)
                    if key in g.keys:
                        tgt = g.keys[key]
                    else:
                        if len(g.states) >= max_states:
                            g.truncated = True
                            continue
                        tgt = len(g.states)
                        g.states.append(succ)
                        g.keys[key] = tgt
                        g.depth[tgt] = g.depth[idx] + 1
                        nxt.append(tgt)
                    g.edges.append(Edge(idx, r.rule, r.summary(), tgt))
            frontier = nxt
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    return g


def path_to(g: StateGraph, target: int) -> list[Edge]:
    """One shortest edge path from the root to `target` (BFS parents)."""
    parent: dict[int, Edge] = {}
    for e in g.edges:
        if e.dst not in parent and (e.src in parent or e.src == g.root):
            if e.dst != g.root:
                parent.setdefault(e.dst, e)
    # Edges are appended in BFS order, so a single pass suffices.
    path = []
    cur = target
    while cur != g.root:
        e = parent[cur]
        path.append(e)
        cur = e.src
    return list(reversed(path))


def replay(g: StateGraph, witness: list[Edge] | list[tuple[str, str]],
           start: Optional[T.Process] = None) -> T.Process:
    """Re-apply a witness path from the root; each step re-enumerates the
    redexes of the current state and fires the recorded (rule, summary)."""
    state = normalize(start if start is not None else g.states[g.root])
    for e in witness:
        rule, summary = (e.rule, e.summary) if isinstance(e, Edge) else e
        chosen = None
        for r in enabled_redexes(state):
            if r.rule == rule and r.summary() == summary:
                chosen = r
                break
        if chosen is None:
            raise ValueError(f"witness step {rule} {summary!r} not enabled")
        state = normalize(step(state, chosen))
    return state


# ---------------------------------------------------------------------------
# Verdicts and theorem harnesses

@dataclass
class Verdict:
    prop: str
    holds: bool
    witness: Optional[list[Edge]] = None
    witness_state: Optional[T.Process] = None
    detail: str = ""
    states: int = 0
    edges: int = 0
    truncated: bool = False
    wall_time: float = 0.0

    def render(self, include_time: bool = True) -> str:
        status = "holds" if self.holds else "VIOLATED"
        lines = [f"{self.prop}: {status} "
                 f"(states={self.states} edges={self.edges}"
                 f"{' truncated' if self.truncated else ''})"]
        if self.detail:
            lines.append(f"  {self.detail}")
        if self.witness is not None:
            lines.append("  witness:")
            for i, e in enumerate(self.witness):
                lines.append(f"    [{i}] {e.summary}")
            if self.witness_state is not None:
                lines.append(f"  state: {print_process(self.witness_state)}")
        if include_time:
            lines.append(f"  wall time: {self.wall_time:.3f}s")
        return "\n".join(lines)


class PreconditionViolated(Exception):
    """The harness was asked to assume typability that does not hold."""


@dataclass(frozen=True)
class Bounds:
    max_states: int = 10000
    max_depth: int = 1000


def _require_welltyped(p, gamma, theta):
    try:
        delta, _ = typecheck(gamma, theta, p)
    except SessionTypeError as exc:
        raise PreconditionViolated(f"initial process is ill-typed: {exc}") \
            from exc
    if not S.balanced(delta):
        raise PreconditionViolated("initial typing is not balanced")


def check_subject_reduction(p: T.Process, gamma: S.NameEnv, theta: S.LocEnv,
                            bounds: Bounds = Bounds(),
                            graph: Optional[StateGraph] = None) -> Verdict:
    """Every reachable state must retype with a balanced typing."""
    t0 = time.perf_counter()
    _require_welltyped(p, gamma, theta)
    g = graph or explore(p, bounds.max_states, bounds.max_depth)
    verdict = Verdict("subject-reduction", True, states=len(g.states),
                      edges=len(g.edges), truncated=g.truncated)
    for idx, state in enumerate(g.states):
        try:
            delta, _ = typecheck(gamma, theta, state)
            if not S.balanced(delta):
                raise SessionTypeError("Unbalanced", "typing is unbalanced")
        except SessionTypeError as exc:
            verdict.holds = False
            verdict.witness = path_to(g, idx)
            verdict.witness_state = state
            verdict.detail = f"state fails to retype: {exc}"
            break
    verdict.wall_time = time.perf_counter() - t0
    return verdict


def check_safety(p: T.Process, gamma: Optional[S.NameEnv] = None,
                 theta: Optional[S.LocEnv] = None,
                 bounds: Bounds = Bounds(),
                 require_typed: bool = True,
                 graph: Optional[StateGraph] = None) -> Verdict:
    """No reachable state is a communication error."""
    t0 = time.perf_counter()
    if require_typed:
        _require_welltyped(p, gamma, theta)
    g = graph or explore(p, bounds.max_states, bounds.max_depth)
    verdict = Verdict("safety", True, states=len(g.states),
                      edges=len(g.edges), truncated=g.truncated)
    for idx, state in enumerate(g.states):
        if is_error(state):
            verdict.holds = False
            verdict.witness = path_to(g, idx)
            verdict.witness_state = state
            verdict.detail = "reachable error configuration"
            break
    verdict.wall_time = time.perf_counter() - t0
    return verdict


def check_update_consistency(p: T.Process, bounds: Bounds = Bounds(),
                             graph: Optional[StateGraph] = None) -> Verdict:
    """Every channel redex present before an update step survives it.

    Runs on arbitrary closed terms; typing is not assumed, so corrupted
    configurations can be examined directly.
    """
    t0 = time.perf_counter()
    g = graph or explore(p, bounds.max_states, bounds.max_depth)
    verdict = Verdict("update-consistency", True, states=len(g.states),
                      edges=len(g.edges), truncated=g.truncated)
    done = False
    for idx, state in enumerate(g.states):
        if done:
            break
        before = kappa_redex_cids(state)
        if not before:
            continue
        for r in enabled_redexes(state):
            if r.rule != "r:Upd":
                continue
            # Compare on the raw successor: canonical renumbering would
            # detach channel identities across the step.
            after = kappa_redex_cids(step(state, r))
            lost = before - after
            if lost:
                verdict.holds = False
                verdict.witness = path_to(g, idx) + [
                    Edge(idx, r.rule, r.summary(), -1)]
                verdict.witness_state = normalize(step(state, r))
                names = ", ".join(f"k#{c}" for c in sorted(lost))
                verdict.detail = f"update destroys redex(es) on {names}"
                done = True
                break
    verdict.wall_time = time.perf_counter() - t0
    return verdict
