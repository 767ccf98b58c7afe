"""Session types, duality, environments, typings, and the interface preorder."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Union

from .terms import Chan, Var

BASIC_SORTS = ("int", "bool", "str")


# ---------------------------------------------------------------------------
# Session types
#
# Branch/select nodes keep their arms sorted by label, so structural equality
# is label-set equality.  The `open_row` flag is internal to the checker: a
# synthesized selection only pins down the labels actually selected, and may
# be widened when matched against a declared or dual type.

@dataclass(frozen=True, slots=True)
class TEnd:
    pass


@dataclass(frozen=True, slots=True)
class TSend:
    payload: tuple[str, ...]
    cont: "SessionType"


@dataclass(frozen=True, slots=True)
class TRecv:
    payload: tuple[str, ...]
    cont: "SessionType"


@dataclass(frozen=True, slots=True)
class TThrow:
    delegated: "SessionType"
    cont: "SessionType"


@dataclass(frozen=True, slots=True)
class TCatch:
    delegated: "SessionType"
    cont: "SessionType"


@dataclass(frozen=True, slots=True)
class TBranch:
    arms: tuple[tuple[str, "SessionType"], ...]
    open_row: bool = False

    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.arms)

    def arm(self, label: str) -> Optional["SessionType"]:
        for lab, t in self.arms:
            if lab == label:
                return t
        return None


@dataclass(frozen=True, slots=True)
class TSelect:
    arms: tuple[tuple[str, "SessionType"], ...]
    open_row: bool = False

    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.arms)

    def arm(self, label: str) -> Optional["SessionType"]:
        for lab, t in self.arms:
            if lab == label:
                return t
        return None


@dataclass(frozen=True, slots=True)
class TMeta:
    """Checker-internal placeholder for a delegated type solved by unification."""

    uid: int


SessionType = Union[TEnd, TSend, TRecv, TThrow, TCatch, TBranch, TSelect, TMeta]

END = TEnd()

_meta_counter = itertools.count()


def fresh_meta() -> TMeta:
    return TMeta(next(_meta_counter))


def sorted_arms(arms) -> tuple[tuple[str, SessionType], ...]:
    return tuple(sorted(arms, key=lambda a: a[0]))


def branch(arms, open_row: bool = False) -> TBranch:
    return TBranch(sorted_arms(arms), open_row)


def select(arms, open_row: bool = False) -> TSelect:
    return TSelect(sorted_arms(arms), open_row)


def dual(t: SessionType) -> SessionType:
    """Swap send/receive, throw/catch, branch/select, componentwise."""
    if isinstance(t, TEnd):
        return t
    if isinstance(t, TSend):
        return TRecv(t.payload, dual(t.cont))
    if isinstance(t, TRecv):
        return TSend(t.payload, dual(t.cont))
    if isinstance(t, TThrow):
        return TCatch(t.delegated, dual(t.cont))
    if isinstance(t, TCatch):
        return TThrow(t.delegated, dual(t.cont))
    if isinstance(t, TBranch):
        return TSelect(tuple((lab, dual(a)) for lab, a in t.arms), t.open_row)
    if isinstance(t, TSelect):
        return TBranch(tuple((lab, dual(a)) for lab, a in t.arms), t.open_row)
    return t  # TMeta: delegated payload types are identical on both sides


# ---------------------------------------------------------------------------
# Multiplicities

@dataclass(frozen=True, slots=True, order=False)
class Mult:
    """A finite nonnegative usage count or infinity (None)."""

    count: Optional[int]

    def is_inf(self) -> bool:
        return self.count is None

    def __le__(self, other: "Mult") -> bool:
        if other.count is None:
            return True
        if self.count is None:
            return False
        return self.count <= other.count

    def __add__(self, other: "Mult") -> "Mult":
        if self.count is None or other.count is None:
            return INF
        return Mult(self.count + other.count)

    def render(self) -> str:
        return "inf" if self.count is None else str(self.count)


INF = Mult(None)
ONE = Mult(1)


# ---------------------------------------------------------------------------
# Interfaces
#
# An interface holds one entry per (name, session type) pair.  A name shows
# up once per role: providers register the declared service type, clients
# the dual.  Entries merge by multiplicity addition.

@dataclass(frozen=True)
class Interface:
    entries: tuple[tuple[str, SessionType, Mult], ...] = ()

    @staticmethod
    def of(*entries: tuple[str, SessionType, Mult]) -> "Interface":
        acc: dict[tuple[str, SessionType], Mult] = {}
        for name, t, m in entries:
            key = (name, t)
            acc[key] = acc[key] + m if key in acc else m
        return Interface(_freeze(acc))

    def get(self, name: str, t: SessionType) -> Optional[Mult]:
        for n, ty, m in self.entries:
            if n == name and ty == t:
                return m
        return None

    def merge(self, other: "Interface") -> "Interface":
        return Interface.of(*self.entries, *other.entries)

    def scale_inf(self) -> "Interface":
        """Every entry used unboundedly often (body of a replicated accept)."""
        return Interface(tuple((n, t, INF) for n, t, _ in self.entries))

    def is_empty(self) -> bool:
        return not self.entries


def _freeze(acc: dict) -> tuple:
    from .printer import print_type  # local import: printer is leaf-level

    return tuple(sorted(((n, t, m) for (n, t), m in acc.items()),
                        key=lambda e: (e[0], print_type(e[1]))))


EMPTY_IFACE = Interface()


def interface_leq(i1: Interface, i2: Interface) -> bool:
    """Containment: every entry of i1 appears in i2 with the same type and
    a multiplicity at least as large."""
    for name, t, m in i1.entries:
        m2 = i2.get(name, t)
        if m2 is None or not (m <= m2):
            return False
    return True


# ---------------------------------------------------------------------------
# Typings (active sessions)

EndpointKey = Union[Var, Chan]


@dataclass(frozen=True, slots=True)
class TypingEntry:
    type: SessionType
    bracketed: bool = False


Typing = dict  # EndpointKey -> TypingEntry; plain dicts, threaded functionally


def balanced(delta: Typing) -> bool:
    """Every channel entry has its dual-polarity, dual-type, same-bracketing
    partner.  Entries keyed by a plain name cannot be balanced."""
    for key, entry in delta.items():
        if not isinstance(key, Chan):
            return False
        partner = delta.get(key.dual())
        if partner is None:
            return False
        if partner.bracketed != entry.bracketed:
            return False
        if partner.type != dual(entry.type):
            return False
    return True


# ---------------------------------------------------------------------------
# Environments

@dataclass(frozen=True)
class ServiceDecl:
    accept_type: SessionType
    accept_qual: str  # 'lin' | 'un'
    request_type: SessionType
    request_qual: str


@dataclass(frozen=True)
class NameEnv:
    """First-order environment: basic-typed variables and declared services.

    The two session types of a service declaration are duals of each other;
    the first component governs accepts, the second requests.
    """

    services: dict = field(default_factory=dict)  # name -> ServiceDecl
    basics: dict = field(default_factory=dict)  # var -> basic sort

    def service(self, name: str) -> Optional[ServiceDecl]:
        return self.services.get(name)


@dataclass(frozen=True)
class LocEnv:
    """Higher-order environment: interfaces declared for locations and
    process variables."""

    locations: dict = field(default_factory=dict)  # loc -> Interface
    procvars: dict = field(default_factory=dict)  # var -> Interface

    def with_procvar(self, name: str, iface: Interface) -> "LocEnv":
        pv = dict(self.procvars)
        pv[name] = iface
        return LocEnv(self.locations, pv)
