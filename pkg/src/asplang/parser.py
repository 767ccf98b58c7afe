"""Concrete syntax: lexer, parser, scope checker, and diagnostics.

A source file is a sequence of declarations followed by one designated
``main`` process::

    type t = ?(int).end;
    name a : <?(int).end lin, !(int).end lin>;
    locinterface w : { a: t @ 1 };
    proc Echo = accept a(x). recv x(v: int). close x. 0;
    main = loc w [ Echo ] | request a(y). send y(1). close y. 0;

Type aliases and process definition references are resolved at parse time:
the returned AST is self-contained.  Definitions are plain macros, expanded
at the use site (their free names may be captured by binders there), and a
definition may only reference earlier definitions, so there is no recursion.

Runtime channel endpoints are written ``k#3+`` / ``k#3-`` and are accepted
only under a matching ``new(k#3)`` binder; a free one is a scope error.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import terms as T
from . import sessiontypes as S

KEYWORDS = {
    "request", "accept", "loc", "update", "send", "recv", "throw", "catch",
    "case", "sel", "if", "then", "else", "close", "new", "true", "false",
    "name", "locinterface", "procinterface", "proc", "main", "type",
    "int", "bool", "str", "end", "dual", "inf", "lin", "un",
}

_PUNCT = ["||", "&&", "!!", "??", "(", ")", "{", "}", "[", "]", "<", ">",
           ",", ":", ";", ".", "|", "=", "+", "-", "/", "@", "!", "?", "&",
           "$"]


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # 'error'
    span: tuple[int, int]
    message: str


class SyntaxDiagnostics(Exception):
    """Raised when parsing or scope checking fails."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(d.message for d in diagnostics))


@dataclass(frozen=True)
class SourceFile:
    gamma: S.NameEnv
    theta: S.LocEnv
    defs: tuple[tuple[str, T.Process], ...]
    main: T.Process


@dataclass(frozen=True)
class Token:
    kind: str  # 'ident', 'int', 'string', 'chan', punctuation, keyword, 'eof'
    value: object
    start: int
    end: int


def _is_ident_start(c: str) -> bool:
    return c.isalpha() or c == "_"


def _is_ident_rest(c: str) -> bool:
    return c.isalnum() or c == "_"


def lex(text: str) -> list[Token]:
    toks: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in " \t\r\n":
            i += 1
            continue
        if text.startswith("//", i):
            j = text.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        start = i
        if _is_ident_start(c):
            j = i + 1
            while j < n and _is_ident_rest(text[j]):
                j += 1
            word = text[i:j]
            # Channel literal: k#3+ / k#3- (endpoint) or k#3 (binder)
            if word == "k" and j < n and text[j] == "#":
                m = j + 1
                while m < n and text[m].isdigit():
                    m += 1
                if m > j + 1:
                    if m < n and text[m] in "+-":
                        toks.append(Token("chan",
                                          T.Chan(int(text[j + 1:m]), text[m]),
                                          i, m + 1))
                        i = m + 1
                    else:
                        toks.append(Token("chanid", int(text[j + 1:m]), i, m))
                        i = m
                    continue
            if word == "accept" and j < n and text[j] == "*":
                toks.append(Token("accept*", "accept*", i, j + 1))
                i = j + 1
                continue
            kind = word if word in KEYWORDS else "ident"
            toks.append(Token(kind, word, i, j))
            i = j
            continue
        if c.isdigit():
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            toks.append(Token("int", int(text[i:j]), i, j))
            i = j
            continue
        if c == '"':
            j = i + 1
            buf = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n:
                    esc = text[j + 1]
                    buf.append({"n": "\n", "t": "\t"}.get(esc, esc))
                    j += 2
                else:
                    buf.append(text[j])
                    j += 1
            if j >= n:
                raise SyntaxDiagnostics(
                    [Diagnostic("error", (i, n), "unterminated string literal")])
            toks.append(Token("string", "".join(buf), i, j + 1))
            i = j + 1
            continue
        for p in _PUNCT:
            if text.startswith(p, i):
                toks.append(Token(p, p, i, i + len(p)))
                i += len(p)
                break
        else:
            raise SyntaxDiagnostics(
                [Diagnostic("error", (i, i + 1), f"unexpected character {c!r}")])
    toks.append(Token("eof", None, n, n))
    return toks


class _Parser:
    def __init__(self, toks: list[Token]):
        self.toks = toks
        self.pos = 0
        self.aliases: dict[str, S.SessionType] = {}
        self.defs: dict[str, T.Process] = {}
        self.diags: list[Diagnostic] = []

    # -- token plumbing ------------------------------------------------

    @property
    def cur(self) -> Token:
        return self.toks[self.pos]

    def advance(self) -> Token:
        t = self.cur
        if t.kind != "eof":
            self.pos += 1
        return t

    def at(self, kind: str) -> bool:
        return self.cur.kind == kind

    def accept(self, kind: str):
        if self.at(kind):
            return self.advance()
        return None

    def expect(self, kind: str) -> Token:
        if self.at(kind):
            return self.advance()
        self.fail(f"expected {kind!r}, found {self.describe(self.cur)}")

    def describe(self, t: Token) -> str:
        return "end of input" if t.kind == "eof" else repr(str(t.value))

    def fail(self, msg: str, span=None):
        span = span or (self.cur.start, self.cur.end)
        raise SyntaxDiagnostics(self.diags + [Diagnostic("error", span, msg)])

    def ident(self) -> str:
        return str(self.expect("ident").value)

    # -- types ---------------------------------------------------------

    def type_expr(self) -> S.SessionType:
        t = self.cur
        if self.accept("end"):
            return S.END
        if self.accept("!"):
            self.expect("(")
            sorts = self.sort_list()
            self.expect(")")
            self.expect(".")
            return S.TSend(sorts, self.type_expr())
        if self.accept("?"):
            self.expect("(")
            sorts = self.sort_list()
            self.expect(")")
            self.expect(".")
            return S.TRecv(sorts, self.type_expr())
        if self.accept("!!"):
            self.expect("(")
            inner = self.type_expr()
            self.expect(")")
            self.expect(".")
            return S.TThrow(inner, self.type_expr())
        if self.accept("??"):
            self.expect("(")
            inner = self.type_expr()
            self.expect(")")
            self.expect(".")
            return S.TCatch(inner, self.type_expr())
        if self.accept("&"):
            return S.branch(self.labeled_types())
        if self.accept("+"):
            return S.select(self.labeled_types())
        if self.accept("dual"):
            self.expect("(")
            inner = self.type_expr()
            self.expect(")")
            return S.dual(inner)
        if self.accept("("):
            inner = self.type_expr()
            self.expect(")")
            return inner
        if self.at("ident"):
            name = str(self.advance().value)
            if name not in self.aliases:
                self.fail(f"unknown type alias {name!r}", (t.start, t.end))
            return self.aliases[name]
        self.fail(f"expected a session type, found {self.describe(t)}")

    def sort_list(self) -> tuple[str, ...]:
        sorts = [self.basic_sort()]
        while self.accept(","):
            sorts.append(self.basic_sort())
        return tuple(sorts)

    def basic_sort(self) -> str:
        for s in S.BASIC_SORTS:
            if self.accept(s):
                return s
        self.fail(f"expected a basic type, found {self.describe(self.cur)}")

    def labeled_types(self):
        self.expect("{")
        arms = [self.labeled_type()]
        seen = {arms[0][0]}
        while self.accept(","):
            lab, ty = self.labeled_type()
            if lab in seen:
                self.fail(f"duplicate label {lab!r}")
            seen.add(lab)
            arms.append((lab, ty))
        self.expect("}")
        return arms

    def labeled_type(self):
        lab = self.ident()
        self.expect(":")
        return lab, self.type_expr()

    # -- expressions ---------------------------------------------------

    def expr(self) -> T.Expr:
        left = self.expr_eq()
        while self.accept("&&"):
            left = T.BinOp("&&", left, self.expr_eq())
        return left

    def expr_eq(self) -> T.Expr:
        left = self.expr_add()
        if self.accept("="):
            return T.BinOp("=", left, self.expr_add())
        return left

    def expr_add(self) -> T.Expr:
        left = self.expr_mul()
        while self.cur.kind in ("+", "-"):
            op = str(self.advance().value)
            left = T.BinOp(op, left, self.expr_mul())
        return left

    def expr_mul(self) -> T.Expr:
        left = self.expr_atom()
        while self.accept("/"):
            left = T.BinOp("/", left, self.expr_atom())
        return left

    def expr_atom(self) -> T.Expr:
        t = self.cur
        if self.at("int"):
            return T.IntLit(int(self.advance().value))
        if self.accept("true"):
            return T.BoolLit(True)
        if self.accept("false"):
            return T.BoolLit(False)
        if self.at("string"):
            return T.StrLit(str(self.advance().value))
        if self.at("ident"):
            return T.VarRef(str(self.advance().value))
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        self.fail(f"expected an expression, found {self.describe(t)}")

    # -- processes -----------------------------------------------------

    def endpoint(self) -> T.Endpoint:
        if self.at("chan"):
            return self.advance().value  # type: ignore[return-value]
        return T.Var(self.ident())

    def process(self) -> T.Process:
        left = self.seq()
        while self.accept("|"):
            left = T.Par(left, self.seq())
        return left

    def seq(self) -> T.Process:
        t = self.cur
        span = (t.start, t.end)
        if self.accept("request"):
            return self._session_prefix(T.Request, span)
        if self.accept("accept"):
            return self._session_prefix(T.Accept, span)
        if self.accept("accept*"):
            return self._session_prefix(T.ReplAccept, span)
        if self.accept("send"):
            ep = self.endpoint()
            self.expect("(")
            payloads = [self.expr()]
            while self.accept(","):
                payloads.append(self.expr())
            self.expect(")")
            self.expect(".")
            return T.Send(ep, tuple(payloads), self.seq(), span=span)
        if self.accept("recv"):
            ep = self.endpoint()
            self.expect("(")
            binders = [self.recv_binder()]
            while self.accept(","):
                binders.append(self.recv_binder())
            self.expect(")")
            names = [b.name for b in binders]
            if len(set(names)) != len(names):
                self.fail("duplicate receive binder", span)
            self.expect(".")
            return T.Recv(ep, tuple(binders), self.seq(), span=span)
        if self.accept("throw"):
            ep = self.endpoint()
            self.expect("(")
            delegated = self.endpoint()
            self.expect(")")
            self.expect(".")
            return T.Throw(ep, delegated, self.seq(), span=span)
        if self.accept("catch"):
            ep = self.endpoint()
            self.expect("(")
            binder = self.ident()
            self.expect(")")
            self.expect(".")
            return T.Catch(ep, binder, self.seq(), span=span)
        if self.accept("close"):
            ep = self.endpoint()
            self.expect(".")
            return T.Close(ep, self.seq(), span=span)
        if self.accept("sel"):
            ep = self.endpoint()
            self.expect(".")
            label = self.ident()
            self.expect(";")
            return T.Select(ep, label, self.seq(), span=span)
        if self.accept("case"):
            ep = self.endpoint()
            self.expect("{")
            arms = [self.case_arm()]
            seen = {arms[0][0]}
            while self.accept("||"):
                lab, body = self.case_arm()
                if lab in seen:
                    self.fail(f"duplicate case label {lab!r}", span)
                seen.add(lab)
                arms.append((lab, body))
            self.expect("}")
            return T.Branch(ep, tuple(arms), span=span)
        if self.accept("if"):
            cond = self.expr()
            self.expect("then")
            then = self.seq()
            self.expect("else")
            els = self.seq()
            return T.If(cond, then, els, span=span)
        if self.accept("loc"):
            loc = self.ident()
            ann = 0
            if self.accept("@"):
                ann = int(self.expect("int").value)
            self.expect("[")
            body = self.process()
            self.expect("]")
            return T.Located(loc, ann, body, span=span)
        if self.accept("update"):
            loc = self.ident()
            self.expect("{")
            body = self.process()
            self.expect("}")
            fv = sorted(T.free_process_vars(body))
            if len(fv) > 1:
                self.fail(
                    f"update body uses more than one process variable: "
                    f"{', '.join('$' + v for v in fv)}", span)
            return T.Update(loc, fv[0] if fv else None, body, span=span)
        if self.accept("new"):
            self.expect("(")
            cid = int(self.expect("chanid").value)
            self.expect(")")
            return T.Restrict(cid, self.seq(), span=span)
        if self.accept("$"):
            return T.ProcVar(self.ident(), span=span)
        if self.at("int") and self.cur.value == 0:
            self.advance()
            return T.Inaction(span=span)
        if self.accept("("):
            inner = self.process()
            self.expect(")")
            return inner
        if self.at("ident"):
            name = str(self.advance().value)
            if name not in self.defs:
                self.fail(f"unknown process reference {name!r}", span)
            return self.defs[name]
        self.fail(f"expected a process, found {self.describe(t)}")

    def _session_prefix(self, ctor, span) -> T.Process:
        service = self.ident()
        self.expect("(")
        binder = self.ident()
        self.expect(")")
        self.expect(".")
        return ctor(service, binder, self.seq(), span=span)

    def recv_binder(self) -> T.RecvBinder:
        name = self.ident()
        if self.accept(":"):
            return T.RecvBinder(name, self.basic_sort())
        return T.RecvBinder(name)

    def case_arm(self):
        lab = self.ident()
        self.expect(":")
        return lab, self.process()

    # -- declarations --------------------------------------------------

    def interface_literal(self) -> S.Interface:
        self.expect("{")
        entries = []
        if not self.at("}"):
            entries.append(self.interface_entry())
            while self.accept(","):
                entries.append(self.interface_entry())
        self.expect("}")
        return S.Interface.of(*entries)

    def interface_entry(self):
        name = self.ident()
        self.expect(":")
        ty = self.type_expr()
        self.expect("@")
        if self.accept("inf"):
            return (name, ty, S.INF)
        count = int(self.expect("int").value)
        return (name, ty, S.Mult(count))

    def source_file(self) -> SourceFile:
        services: dict[str, S.ServiceDecl] = {}
        locations: dict[str, S.Interface] = {}
        procvars: dict[str, S.Interface] = {}
        defs: list[tuple[str, T.Process]] = []
        main: T.Process | None = None

        while not self.at("eof"):
            t = self.cur
            if self.accept("type"):
                name = self.ident()
                self.expect("=")
                self.aliases[name] = self.type_expr()
                self.expect(";")
            elif self.accept("name"):
                name = self.ident()
                if name in services:
                    self.fail(f"service {name!r} declared twice",
                              (t.start, t.end))
                self.expect(":")
                self.expect("<")
                aty = self.type_expr()
                aq = self.qual()
                self.expect(",")
                rty = self.type_expr()
                rq = self.qual()
                self.expect(">")
                self.expect(";")
                if S.dual(aty) != rty:
                    self.fail(
                        f"the two session types declared for {name!r} are "
                        "not duals of each other", (t.start, t.end))
                services[name] = S.ServiceDecl(aty, aq, rty, rq)
            elif self.accept("locinterface"):
                loc = self.ident()
                if loc in locations:
                    self.fail(f"location {loc!r} declared twice",
                              (t.start, t.end))
                self.expect(":")
                locations[loc] = self.interface_literal()
                self.expect(";")
            elif self.accept("procinterface"):
                self.expect("$")
                pv = self.ident()
                if pv in procvars:
                    self.fail(f"process variable ${pv} declared twice",
                              (t.start, t.end))
                self.expect(":")
                procvars[pv] = self.interface_literal()
                self.expect(";")
            elif self.accept("proc"):
                name = self.ident()
                if name in self.defs:
                    self.fail(f"process {name!r} defined twice",
                              (t.start, t.end))
                self.expect("=")
                body = self.process()
                self.expect(";")
                self.defs[name] = body
                defs.append((name, body))
            elif self.accept("main"):
                if main is not None:
                    self.fail("main defined twice", (t.start, t.end))
                self.expect("=")
                main = self.process()
                self.expect(";")
            else:
                self.fail(f"expected a declaration, found {self.describe(t)}")

        if main is None:
            self.fail("missing main", (0, 0))
        return SourceFile(S.NameEnv(services),
                          S.LocEnv(locations, procvars),
                          tuple(defs), main)

    def qual(self) -> str:
        if self.accept("lin"):
            return "lin"
        if self.accept("un"):
            return "un"
        self.fail("expected qualifier 'lin' or 'un'")


# ---------------------------------------------------------------------------
# Scope checking

def _scope_check(p: T.Process, sf: SourceFile, diags: list[Diagnostic],
                 require_closed: bool):
    seen: set[tuple[tuple[int, int], str]] = set()

    def report(node, msg: str):
        span = getattr(node, "span", None) or (0, 0)
        key = (span, msg)
        if key not in seen:
            seen.add(key)
            diags.append(Diagnostic("error", span, msg))

    def check_service(node, name: str):
        if name not in sf.gamma.services:
            report(node, f"undeclared service name {name!r}")

    def check_loc(node, name: str):
        if name not in sf.theta.locations:
            report(node, f"undeclared location {name!r}")

    def check_ep(node, ep: T.Endpoint, evars: frozenset, cids: frozenset):
        if isinstance(ep, T.Var):
            if require_closed and ep.name not in evars:
                report(node, f"unbound endpoint {ep.name!r}")
        else:
            if require_closed and ep.cid not in cids:
                report(node, f"free runtime channel k#{ep.cid}{ep.pol}")

    def check_expr(node, e: T.Expr, xvars: frozenset):
        if isinstance(e, T.VarRef):
            if require_closed and e.name not in xvars:
                report(node, f"unbound variable {e.name!r}")
        elif isinstance(e, T.BinOp):
            check_expr(node, e.left, xvars)
            check_expr(node, e.right, xvars)

    def go(n: T.Process, evars: frozenset, xvars: frozenset, cids: frozenset):
        if isinstance(n, (T.Request, T.Accept, T.ReplAccept)):
            check_service(n, n.service)
            go(n.body, evars | {n.binder}, xvars, cids)
        elif isinstance(n, T.Located):
            check_loc(n, n.loc)
            go(n.body, evars, xvars, cids)
        elif isinstance(n, T.Update):
            check_loc(n, n.loc)
            go(n.body, evars, xvars, cids)
        elif isinstance(n, T.Send):
            check_ep(n, n.ep, evars, cids)
            for e in n.payloads:
                check_expr(n, e, xvars)
            go(n.cont, evars, xvars, cids)
        elif isinstance(n, T.Recv):
            check_ep(n, n.ep, evars, cids)
            go(n.cont, evars, xvars | {b.name for b in n.binders}, cids)
        elif isinstance(n, T.Throw):
            check_ep(n, n.ep, evars, cids)
            check_ep(n, n.delegated, evars, cids)
            go(n.cont, evars, xvars, cids)
        elif isinstance(n, T.Catch):
            check_ep(n, n.ep, evars, cids)
            go(n.cont, evars | {n.binder}, xvars, cids)
        elif isinstance(n, T.Branch):
            check_ep(n, n.ep, evars, cids)
            for _, q in n.arms:
                go(q, evars, xvars, cids)
        elif isinstance(n, T.Select):
            check_ep(n, n.ep, evars, cids)
            go(n.cont, evars, xvars, cids)
        elif isinstance(n, T.Par):
            go(n.left, evars, xvars, cids)
            go(n.right, evars, xvars, cids)
        elif isinstance(n, T.If):
            check_expr(n, n.cond, xvars)
            go(n.then, evars, xvars, cids)
            go(n.els, evars, xvars, cids)
        elif isinstance(n, T.Close):
            check_ep(n, n.ep, evars, cids)
            go(n.cont, evars, xvars, cids)
        elif isinstance(n, T.Restrict):
            go(n.body, evars, xvars, cids | {n.cid})

    go(p, frozenset(), frozenset(), frozenset())


def parse(text: str) -> SourceFile:
    """Parse a full source file; raises SyntaxDiagnostics on any failure."""
    parser = _Parser(lex(text))
    sf = parser.source_file()
    diags: list[Diagnostic] = []
    for _, body in sf.defs:
        _scope_check(body, sf, diags, require_closed=False)
    _scope_check(sf.main, sf, diags, require_closed=True)
    for pv in sorted(T.free_process_vars(sf.main)):
        diags.append(Diagnostic("error", (0, 0),
                                f"main has free process variable ${pv}"))
    if diags:
        raise SyntaxDiagnostics(diags)
    return sf


def try_parse(text: str):
    """Like parse, but returns (SourceFile | None, diagnostics)."""
    try:
        return parse(text), []
    except SyntaxDiagnostics as exc:
        return None, exc.diagnostics


def parse_process(text: str) -> T.Process:
    """Parse a bare process fragment (no scope checking)."""
    parser = _Parser(lex(text))
    p = parser.process()
    parser.expect("eof")
    return p


def parse_type(text: str) -> S.SessionType:
    parser = _Parser(lex(text))
    t = parser.type_expr()
    parser.expect("eof")
    return t
