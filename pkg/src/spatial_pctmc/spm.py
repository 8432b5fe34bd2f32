"""Reader and writer for the line/block oriented ``.spm`` model format.

Grammar::

    param <name> = <real> ;
    location <label> [at <x> , <y>] [, <label> [at <x>, <y>] ...] ;
    agent <label> [, <label> ...] ;
    init <agent>@<location> = <integer> ;
    transition <label> {
      rate = <expr> ;
      update <agent>@<location> += <integer> [, ...] ;
    }

``#`` starts a comment that runs to the end of the line.  Expressions support
``+ - * /``, unary minus, parentheses, ``min(a, b)``, ``max(a, b)``, numeric
literals, parameter names and ``agent@location`` references.  Populations
not mentioned by an ``init`` line start at zero.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from . import expr as ex
from .errors import DuplicateDeclaration, ParseError, UnknownIdentifier
from .model import AgentType, Location, SpatialModel, Transition

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\+=|[-+*/(){}=;,@])
    """,
    re.VERBOSE,
)

KEYWORDS = {"param", "location", "agent", "init", "transition", "rate", "update", "at"}


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.params: dict[str, float] = {}
        self.locations: list[Location] = []
        self.loc_index: dict[str, int] = {}
        self.agents: list[AgentType] = []
        self.agent_index: dict[str, int] = {}
        self.init: dict[tuple[int, int], int] = {}
        self.transitions: list[Transition] = []
        self.t_labels: set[str] = set()

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg: str, tok: Token | None = None, cls=ParseError):
        tok = tok or self.tok
        return cls(msg, tok.line, tok.col)

    def expect(self, text: str) -> Token:
        if self.tok.text != text or self.tok.kind == "eof":
            raise self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def ident(self) -> Token:
        if self.tok.kind != "ident":
            raise self.error(f"expected identifier, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def number(self) -> float:
        sign = 1.0
        if self.tok.text in ("-", "+"):
            sign = -1.0 if self.advance().text == "-" else 1.0
        if self.tok.kind != "num":
            raise self.error(f"expected number, found {self.tok.text or 'end of input'!r}")
        return sign * float(self.advance().text)

    def integer(self) -> int:
        start = self.tok
        v = self.number()
        if v != int(v) or any(c in self.toks[self.i - 1].text for c in ".eE"):
            raise self.error("expected integer", start)
        return int(v)

    # -- declarations
    def parse(self) -> SpatialModel:
        while self.tok.kind != "eof":
            kw = self.tok
            if kw.kind != "ident" or kw.text not in KEYWORDS - {"rate", "update", "at"}:
                raise self.error(f"expected a declaration, found {kw.text!r}")
            getattr(self, "decl_" + kw.text)()
        if not self.locations:
            raise self.error("model declares no locations")
        if not self.agents:
            raise self.error("model declares no agents")
        n = len(self.agents)
        initial = [0] * (n * len(self.locations))
        for (a, loc), v in self.init.items():
            initial[loc * n + a] = v
        return SpatialModel.build(self.locations, self.agents, initial,
                                  self.transitions, self.params)

    def decl_param(self):
        self.advance()
        name = self.ident()
        if name.text in self.params:
            raise self.error(f"duplicate param {name.text!r}", name, DuplicateDeclaration)
        self.expect("=")
        self.params[name.text] = self.number()
        self.expect(";")

    def decl_location(self):
        self.advance()
        while True:
            name = self.ident()
            if name.text in self.loc_index:
                raise self.error(f"duplicate location {name.text!r}", name, DuplicateDeclaration)
            coord = None
            if self.tok.text == "at":
                self.advance()
                x = self.number()
                self.expect(",")
                y = self.number()
                coord = (x, y)
            self.loc_index[name.text] = len(self.locations)
            self.locations.append(Location(len(self.locations), name.text, coord))
            if self.tok.text == ",":
                self.advance()
                continue
            self.expect(";")
            return

    def decl_agent(self):
        self.advance()
        while True:
            name = self.ident()
            if name.text in self.agent_index:
                raise self.error(f"duplicate agent {name.text!r}", name, DuplicateDeclaration)
            self.agent_index[name.text] = len(self.agents)
            self.agents.append(AgentType(len(self.agents), name.text))
            if self.tok.text == ",":
                self.advance()
                continue
            self.expect(";")
            return

    def population(self) -> tuple[int, int]:
        a = self.ident()
        self.expect("@")
        loc = self.ident()
        if a.text not in self.agent_index:
            raise self.error(f"unknown agent {a.text!r}", a, UnknownIdentifier)
        if loc.text not in self.loc_index:
            raise self.error(f"unknown location {loc.text!r}", loc, UnknownIdentifier)
        return self.agent_index[a.text], self.loc_index[loc.text]

    def decl_init(self):
        self.advance()
        start = self.tok
        key = self.population()
        if key in self.init:
            raise self.error("duplicate init", start, DuplicateDeclaration)
        self.expect("=")
        v = self.integer()
        if v < 0:
            raise self.error("initial population must be >= 0", start)
        self.init[key] = v
        self.expect(";")

    def decl_transition(self):
        self.advance()
        name = self.ident()
        if name.text in self.t_labels:
            raise self.error(f"duplicate transition {name.text!r}", name, DuplicateDeclaration)
        self.expect("{")
        rate = None
        update: dict[tuple[int, int], int] = {}
        while self.tok.text != "}":
            kw = self.ident()
            if kw.text == "rate":
                if rate is not None:
                    raise self.error("rate given twice", kw, DuplicateDeclaration)
                self.expect("=")
                rate = self.expr()
                self.expect(";")
            elif kw.text == "update":
                while True:
                    key = self.population()
                    self.expect("+=")
                    update[key] = update.get(key, 0) + self.integer()
                    if self.tok.text == ",":
                        self.advance()
                        continue
                    break
                self.expect(";")
            else:
                raise self.error(f"expected 'rate' or 'update', found {kw.text!r}", kw)
        close = self.expect("}")
        if rate is None:
            raise self.error(f"transition {name.text!r} has no rate", close)
        if not any(update.values()):
            raise self.error(f"transition {name.text!r} has an empty update", close)
        self.t_labels.add(name.text)
        self.transitions.append(Transition.make(name.text, rate, update))

    # -- expressions (precedence climbing)
    def expr(self) -> ex.RateExpr:
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            node = ex.BinOp(op, node, self.term())
        return node

    def term(self) -> ex.RateExpr:
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            node = ex.BinOp(op, node, self.unary())
        return node

    def unary(self) -> ex.RateExpr:
        if self.tok.text == "-":
            self.advance()
            inner = self.unary()
            if isinstance(inner, ex.Const):
                return ex.Const(-inner.value)
            return ex.BinOp("-", ex.Const(0.0), inner)
        if self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.atom()

    def atom(self) -> ex.RateExpr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return ex.Const(float(tok.text))
        if tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            if tok.text in ("min", "max") and self.toks[self.i + 1].text == "(":
                self.advance()
                self.expect("(")
                a = self.expr()
                self.expect(",")
                b = self.expr()
                self.expect(")")
                return ex.BinOp(tok.text, a, b)
            if self.toks[self.i + 1].text == "@":
                a, loc = self.population()
                return ex.Pop(a, loc)
            self.advance()
            if tok.text not in self.params:
                raise self.error(f"unknown parameter {tok.text!r}", tok, UnknownIdentifier)
            return ex.Param(tok.text)
        raise self.error(f"unexpected {tok.text or 'end of input'!r} in expression")


def parse_model(text: str) -> SpatialModel:
    return _Parser(text).parse()


def load_model(path: str | Path) -> SpatialModel:
    return parse_model(Path(path).read_text(encoding="utf-8"))


def serialize_model(model: SpatialModel, header: str | None = None) -> str:
    """Render ``model`` as ``.spm`` text; ``header`` lines become comments."""
    agents = [a.label for a in model.agents]
    locs = [loc.label for loc in model.locations]
    out: list[str] = []
    if header:
        out.extend("# " + line if line else "#" for line in header.splitlines())
        out.append("")
    for name, v in model.params:
        out.append(f"param {name} = {v!r} ;")
    for loc in model.locations:
        if loc.coord is None:
            out.append(f"location {loc.label} ;")
        else:
            out.append(f"location {loc.label} at {loc.coord[0]!r} , {loc.coord[1]!r} ;")
    out.append("agent " + ", ".join(agents) + " ;")
    n = model.n_agents
    for i, v in enumerate(model.initial):
        if v:
            out.append(f"init {agents[i % n]}@{locs[i // n]} = {v} ;")
    for t in model.transitions:
        out.append(f"transition {t.label} {{")
        out.append(f"  rate = {ex.format_expr(t.rate, agents, locs)} ;")
        ups = ", ".join(f"{agents[a]}@{locs[loc]} += {v}" for (a, loc), v in t.update)
        out.append(f"  update {ups} ;")
        out.append("}")
    return "\n".join(out) + "\n"


def save_model(model: SpatialModel, path: str | Path, header: str | None = None) -> None:
    Path(path).write_text(serialize_model(model, header), encoding="utf-8")
