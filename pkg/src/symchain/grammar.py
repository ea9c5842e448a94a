"""Text grammar for expressions, problems, candidates and system files.

Expression grammar: infix ``+ - * / ^`` with integer exponents, exact
integer literals (rationals arise from division), derivative suffix names
``u_tx`` (multi-index, so ``u_tx`` and ``u_xt`` are the same indeterminate),
trailing apostrophes in names (``tau'``), and function application
``f(u)`` / ``tanh(expr)``.  Only declared names are accepted.

Problem files are line oriented::

    independents t x
    dependents u
    unknowns tau xi eta          # generator slots: independents then dependents
    parameters sigma
    parameter r2 : r2^2 = 2      # side relation
    functions f(u) g(u)
    rank t < x < u ; xi < eta < tau
    equation u_t = u_xx + u*(u-1)*(u-sigma)
    extend xi_u                  # optional subset-Q selection
    candidate name
      parameters c1
      functions b(t,x)
      bind f = c1*u^3
      bind sigma = 1/2
      xi = ...
      eta = ...
      side b_t - b_xx = 0
    end

``parse_problem(text)`` and ``print_problem(problem)`` round-trip on normal
forms.  Parse errors carry line/column and the expected token set.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ProblemSyntaxError, SolvedFormError
from .expr import CLOSED_FUNCS, Expr, Jet, SideRelation, Sym, VarSpace

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+)|(?P<name>[A-Za-z][A-Za-z0-9]*'*(?:_[A-Za-z][A-Za-z0-9]*)?)"
    r"|(?P<op>[-+*/^(),]))")


class _Lexer:
    def __init__(self, text, line=None):
        self.text = text
        self.line = line
        self.pos = 0
        self.tokens = []
        while self.pos < len(text):
            m = _TOKEN_RE.match(text, self.pos)
            if not m or m.end() == self.pos:
                if text[self.pos:].strip() == "":
                    break
                raise ProblemSyntaxError(
                    f"unexpected character {text[self.pos:].lstrip()[0]!r}",
                    line=line, column=self.pos + 1)
            self.tokens.append((m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
            self.pos = m.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None, len(self.text))

    def next(self):
        t = self.peek()
        self.i += 1
        return t

    def expect(self, kind, value=None):
        k, v, c = self.next()
        if k != kind or (value is not None and v != value):
            raise ProblemSyntaxError(
                f"unexpected token {v!r}", line=self.line, column=c + 1,
                expected=value or kind)
        return v

    def done(self):
        return self.i >= len(self.tokens)


def _split_name(tok):
    if "_" in tok:
        base, suffix = tok.split("_", 1)
        return base, suffix
    return tok, None


def _suffix_to_alpha(space, base, suffix, line, col):
    args = space.args_of(base)
    alpha = [0] * len(args)
    s = suffix
    ordered = sorted(args, key=len, reverse=True)
    while s:
        for a in ordered:
            if s.startswith(a):
                alpha[args.index(a)] += 1
                s = s[len(a):]
                break
        else:
            raise ProblemSyntaxError(
                f"suffix {suffix!r} does not match arguments {args} of {base!r}",
                line=line, column=col)
    return tuple(alpha)


class ExprParser:
    """Recursive-descent expression parser over a variable space."""

    def __init__(self, space: VarSpace, line=None):
        self.space = space
        self.line = line

    def parse(self, text):
        lx = _Lexer(text, self.line)
        e = self._sum(lx)
        if not lx.done():
            k, v, c = lx.peek()
            raise ProblemSyntaxError(f"trailing input {v!r}", line=self.line,
                                     column=c + 1, expected="end of expression")
        return e

    def _sum(self, lx):
        e = self._term(lx)
        while True:
            k, v, _ = lx.peek()
            if k == "op" and v in "+-":
                lx.next()
                rhs = self._term(lx)
                e = e + rhs if v == "+" else e - rhs
            else:
                return e

    def _term(self, lx):
        e = self._factor(lx)
        while True:
            k, v, _ = lx.peek()
            if k == "op" and v in "*/":
                lx.next()
                rhs = self._factor(lx)
                e = e * rhs if v == "*" else e / rhs
            else:
                return e

    def _factor(self, lx):
        k, v, _ = lx.peek()
        sign = 1
        while k == "op" and v in "+-":
            lx.next()
            if v == "-":
                sign = -sign
            k, v, _ = lx.peek()
        e = self._power(lx)
        return e if sign == 1 else -e

    def _power(self, lx):
        e = self._primary(lx)
        k, v, _ = lx.peek()
        if k == "op" and v == "^":
            lx.next()
            k, v, c = lx.peek()
            neg = False
            if k == "op" and v == "-":
                lx.next()
                neg = True
            n = int(lx.expect("num"))
            return e ** (-n if neg else n)
        return e

    def _primary(self, lx):
        k, v, c = lx.next()
        if k == "num":
            return self.space.num(int(v))
        if k == "op" and v == "(":
            e = self._sum(lx)
            lx.expect("op", ")")
            return e
        if k == "name":
            return self._name(lx, v, c)
        raise ProblemSyntaxError(f"unexpected token {v!r}", line=self.line,
                                 column=c + 1, expected="expression")

    def _name(self, lx, tok, col):
        sp = self.space
        base, suffix = _split_name(tok)
        k, v, _ = lx.peek()
        has_args = k == "op" and v == "("
        if base in CLOSED_FUNCS and suffix is None:
            if not has_args:
                raise ProblemSyntaxError(f"{base} requires an argument",
                                         line=self.line, column=col + 1,
                                         expected="(")
            lx.next()
            arg = self._sum(lx)
            lx.expect("op", ")")
            return sp.closed(base, arg)
        if not sp.is_declared(base):
            raise ProblemSyntaxError(f"undeclared symbol {base!r}",
                                     line=self.line, column=col + 1)
        if has_args:
            if base not in sp.functions:
                raise ProblemSyntaxError(f"{base!r} is not a function",
                                         line=self.line, column=col + 1)
            lx.next()
            got = []
            while True:
                got.append(self._sum(lx))
                k, v, c2 = lx.next()
                if k == "op" and v == ")":
                    break
                if not (k == "op" and v == ","):
                    raise ProblemSyntaxError("malformed argument list",
                                             line=self.line, column=c2 + 1,
                                             expected=", or )")
            declared = [sp.sym(a) for a in sp.args_of(base)]
            if got != declared:
                raise ProblemSyntaxError(
                    f"{base!r} must be applied to its declared arguments "
                    f"{sp.args_of(base)}", line=self.line, column=col + 1)
        if suffix is None:
            return sp.sym(base)
        if base not in sp.functions:
            raise ProblemSyntaxError(
                f"{base!r} has no derivatives (not a function)",
                line=self.line, column=col + 1)
        alpha = _suffix_to_alpha(sp, base, suffix, self.line, col + 1)
        return sp.jet(base, alpha)


def parse_expression(text, space, line=None) -> Expr:
    return ExprParser(space, line).parse(text)


# ---------------------------------------------------------------------------
# problem files


@dataclass
class CandidateSpec:
    """Raw candidate block: names plus expression text, resolved lazily."""

    name: str
    parameters: list = field(default_factory=list)       # [(name, relation text|None)]
    functions: list = field(default_factory=list)        # [(name, args tuple)]
    binds: list = field(default_factory=list)            # [(target name, text)]
    slots: list = field(default_factory=list)            # [(slot name, text)]
    sides: list = field(default_factory=list)            # [text]


@dataclass
class ProblemFile:
    independents: tuple
    dependents: tuple
    unknowns: tuple
    parameters: list                                     # [(name, relation text|None)]
    functions: list                                      # [(name, args tuple)]
    rank_base: tuple
    rank_unknowns: tuple
    equations: list                                      # [(lhs text, rhs text)]
    extend: list = field(default_factory=list)           # [text]
    candidates: list = field(default_factory=list)       # [CandidateSpec]


_KEYWORDS = ("independents", "independent", "dependents", "dependent",
             "unknowns", "unknown", "parameters", "parameter",
             "functions", "function", "rank", "equation", "extend",
             "candidate", "end", "bind", "side")


def _parse_function_decls(rest, lineno):
    out = []
    for m in re.finditer(r"([A-Za-z][A-Za-z0-9]*'*)\s*\(([^)]*)\)", rest):
        args = tuple(a.strip() for a in m.group(2).split(",") if a.strip())
        out.append((m.group(1), args))
    if not out:
        raise ProblemSyntaxError("expected function declarations like f(u)",
                                 line=lineno)
    return out


def parse_problem(text) -> ProblemFile:
    independents = dependents = unknowns = None
    parameters = []
    functions = []
    rank_base = rank_unknowns = None
    equations = []
    extend = []
    candidates = []
    cand = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word = line.split(None, 1)[0]
        rest = line[len(word):].strip()
        if cand is not None and word != "end":
            if word in ("parameters", "parameter"):
                cand.parameters.extend(_parse_param_decl(word, rest, lineno))
            elif word in ("functions", "function"):
                cand.functions.extend(_parse_function_decls(rest, lineno))
            elif word == "bind":
                if "=" not in rest:
                    raise ProblemSyntaxError("bind requires '='", line=lineno)
                tgt, val = rest.split("=", 1)
                cand.binds.append((tgt.strip(), val.strip()))
            elif word == "side":
                if "=" in rest:
                    lhs, rhs = rest.split("=", 1)
                    cand.sides.append(f"({lhs.strip()}) - ({rhs.strip()})")
                else:
                    cand.sides.append(rest)
            elif "=" in line:
                tgt, val = line.split("=", 1)
                cand.slots.append((tgt.strip(), val.strip()))
            else:
                raise ProblemSyntaxError(f"unexpected candidate line {line!r}",
                                         line=lineno)
            continue
        if word in ("independents", "independent"):
            independents = tuple(rest.split())
        elif word in ("dependents", "dependent"):
            dependents = tuple(rest.split())
        elif word in ("unknowns", "unknown"):
            unknowns = tuple(rest.split())
        elif word in ("parameters", "parameter"):
            parameters.extend(_parse_param_decl(word, rest, lineno))
        elif word in ("functions", "function"):
            functions.extend(_parse_function_decls(rest, lineno))
        elif word == "rank":
            if ";" not in rest:
                raise ProblemSyntaxError("rank needs 'base ; unknowns'", line=lineno)
            b, u = rest.split(";", 1)
            rank_base = tuple(s.strip() for s in b.split("<"))
            rank_unknowns = tuple(s.strip() for s in u.split("<"))
        elif word == "equation":
            if "=" not in rest:
                raise SolvedFormError(f"equation must be in solved form: {rest!r}")
            lhs, rhs = rest.split("=", 1)
            equations.append((lhs.strip(), rhs.strip()))
        elif word == "extend":
            extend.extend(rest.split())
        elif word == "candidate":
            if not rest:
                raise ProblemSyntaxError("candidate needs a name", line=lineno)
            cand = CandidateSpec(name=rest.strip())
        elif word == "end":
            if cand is None:
                raise ProblemSyntaxError("'end' outside candidate", line=lineno)
            candidates.append(cand)
            cand = None
        else:
            raise ProblemSyntaxError(f"unknown directive {word!r}", line=lineno,
                                     expected=" | ".join(_KEYWORDS))
    if cand is not None:
        raise ProblemSyntaxError(f"candidate {cand.name!r} missing 'end'")
    for what, val in (("independents", independents), ("dependents", dependents),
                      ("unknowns", unknowns), ("rank", rank_base)):
        if val is None:
            raise ProblemSyntaxError(f"missing {what} declaration")
    if not equations:
        raise ProblemSyntaxError("missing equation declaration")
    if len(unknowns) != len(independents) + len(dependents):
        raise ProblemSyntaxError(
            "unknown slots must match independents then dependents")
    return ProblemFile(independents, dependents, unknowns, parameters,
                       functions, rank_base, rank_unknowns, equations,
                       extend, candidates)


def _parse_param_decl(word, rest, lineno):
    if ":" in rest:
        name, rel = rest.split(":", 1)
        names = name.split()
        if len(names) != 1:
            raise ProblemSyntaxError("one parameter per relation", line=lineno)
        return [(names[0].strip(), rel.strip())]
    return [(n, None) for n in rest.split()]


def _relation_from_text(name, rel_text, lineno=None):
    """Build a SideRelation from 'poly = poly' in the single parameter."""
    tmp = VarSpace(independents=(), functions={}, parameters={name: None})
    if "=" in rel_text:
        lhs, rhs = rel_text.split("=", 1)
    else:
        lhs, rhs = rel_text, "0"
    p = parse_expression(lhs, tmp, lineno) - parse_expression(rhs, tmp, lineno)
    coeffs = {}
    for m, c in p.num:
        if not m:
            coeffs[0] = c
        elif len(m) == 1 and isinstance(m[0][0], Sym) and m[0][0].name == name:
            coeffs[m[0][1]] = c
        else:
            raise ProblemSyntaxError(
                f"side relation for {name!r} must be univariate", line=lineno)
    d = max(coeffs)
    lead = coeffs.pop(d)
    tail = {e: -c / lead for e, c in coeffs.items()}
    return SideRelation(name, d, tail)


def print_problem(pf: ProblemFile) -> str:
    """Canonical text for a problem file (round-trips through parse)."""
    out = []
    out.append("independents " + " ".join(pf.independents))
    out.append("dependents " + " ".join(pf.dependents))
    out.append("unknowns " + " ".join(pf.unknowns))
    for name, rel in pf.parameters:
        out.append(f"parameter {name} : {rel}" if rel else f"parameter {name}")
    for name, args in pf.functions:
        out.append(f"function {name}({', '.join(args)})")
    out.append("rank " + " < ".join(pf.rank_base) + " ; "
               + " < ".join(pf.rank_unknowns))
    for lhs, rhs in pf.equations:
        out.append(f"equation {lhs} = {rhs}")
    if pf.extend:
        out.append("extend " + " ".join(pf.extend))
    for c in pf.candidates:
        out.append(f"candidate {c.name}")
        for name, rel in c.parameters:
            out.append(f"  parameter {name} : {rel}" if rel else f"  parameter {name}")
        for name, args in c.functions:
            out.append(f"  function {name}({', '.join(args)})")
        for tgt, val in c.binds:
            out.append(f"  bind {tgt} = {val}")
        for tgt, val in c.slots:
            out.append(f"  {tgt} = {val}")
        for s in c.sides:
            out.append(f"  side {s}")
        out.append("end")
    return "\n".join(out) + "\n"


def parse_system_lines(text, space) -> list:
    """Parse a plain list of expressions, one per line ('#' comments)."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        out.append(parse_expression(line, space, lineno))
    return out
