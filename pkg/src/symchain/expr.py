"""Exact symbolic kernel for differential polynomials.

An :class:`Expr` is a canonical sum of monomials over three kinds of atoms:

* ``Sym``    -- a declared name at order zero: an independent variable, a
  parameter, or a function symbol (dependent, infinitesimal unknown, or an
  opaque coefficient function such as ``f(u)``);
* ``Jet``    -- a derivative indeterminate of a function symbol, indexed by
  a multi-index over the symbol's declared argument list;
* ``Closed`` -- one of the closed elementary functions (exp, tan, tanh,
  coth, sech, csch) applied to an Expr argument.

Coefficients are exact rationals.  Normalization enforces: parameter powers
reduced by declared side relations (e.g. ``r2^2 = 2``), ``sech^2 = 1 -
tanh^2``, ``csch^2 = coth^2 - 1``, and ``exp(a)*exp(b) = exp(a+b)``.  Two
expressions equal modulo those relations have identical normal forms; zero
is the empty sum, so the zero test is syntactic.

An Expr may carry a denominator: a multiset of denominator-free primitive
base polynomials, introduced only through explicit division and assumed
nonzero.  The zero test is on the numerator.

Everything is immutable and every operation is a pure function, so shared
expressions are safe under concurrent use.  The only module-level mutable
state is the atom intern table, guarded by a lock and never observable in
results.
"""

from __future__ import annotations

import math
import threading
from fractions import Fraction
from typing import Callable

from .errors import SubstitutionCycleError

Q0 = Fraction(0)
Q1 = Fraction(1)

CLOSED_FUNCS = ("exp", "tan", "tanh", "coth", "sech", "csch")

_INTERN: dict = {}
_INTERN_LOCK = threading.Lock()


def _intern(key, build):
    atom = _INTERN.get(key)
    if atom is None:
        with _INTERN_LOCK:
            atom = _INTERN.get(key)
            if atom is None:
                atom = build()
                _INTERN[key] = atom
    return atom


class Atom:
    """Interned indeterminate, totally ordered by a structural key."""

    __slots__ = ("key", "_hash")

    def __lt__(self, other):
        return self.key < other.key

    def __le__(self, other):
        return self.key <= other.key

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return self is other or (isinstance(other, Atom) and self.key == other.key)

    def __repr__(self):
        return atom_text(self)


class Sym(Atom):
    __slots__ = ("name",)

    def __new__(cls, name):
        key = (0, name)

        def build():
            a = object.__new__(cls)
            a.name = name
            a.key = key
            a._hash = hash(key)
            return a

        return _intern(key, build)


class Jet(Atom):
    """Derivative indeterminate: ``base`` differentiated ``alpha`` times.

    ``alpha`` is aligned with the declared argument list of ``base`` and has
    at least one positive entry; order zero is represented by ``Sym``.
    """

    __slots__ = ("base", "alpha")

    def __new__(cls, base, alpha):
        alpha = tuple(alpha)
        key = (1, base, alpha)

        def build():
            a = object.__new__(cls)
            a.base = base
            a.alpha = alpha
            a.key = key
            a._hash = hash(key)
            return a

        return _intern(key, build)


class Closed(Atom):
    __slots__ = ("func", "arg")

    def __new__(cls, func, arg):
        key = (2, func, arg.key)

        def build():
            a = object.__new__(cls)
            a.func = func
            a.arg = arg
            a.key = key
            a._hash = hash(key)
            return a

        return _intern(key, build)


def jet(base, alpha):
    """Derivative atom, collapsing the zero multi-index to the plain symbol."""
    alpha = tuple(alpha)
    if not any(alpha):
        return Sym(base)
    return Jet(base, alpha)


# ---------------------------------------------------------------------------
# monomials: tuples of (atom, positive exponent) sorted by atom key


def mono_mul(m1, m2):
    if not m1:
        return m2
    if not m2:
        return m1
    out = dict(m1)
    for a, e in m2:
        out[a] = out.get(a, 0) + e
    return tuple(sorted(((a, e) for a, e in out.items() if e), key=lambda p: p[0].key))


def mono_deg(m):
    return sum(e for _, e in m)


def mono_key(m):
    return (mono_deg(m), tuple((a.key, e) for a, e in m))


MONO_ONE = ()


class SideRelation:
    """Monic reduction rule ``p^degree = sum(tail[e] * p^e, e < degree)``."""

    __slots__ = ("param", "degree", "tail")

    def __init__(self, param, degree, tail):
        if degree < 2:
            raise ValueError("side relation degree must be at least 2")
        self.param = param
        self.degree = degree
        self.tail = {e: Fraction(c) for e, c in dict(tail).items() if c}

    def __repr__(self):
        return f"SideRelation({self.param}^{self.degree} -> {self.tail})"


class VarSpace:
    """Declared symbols: independents, function symbols with argument lists,
    and parameters with optional side relations.

    ``dependents`` is the subset of function symbols treated as jet-space
    coordinates: for formal partial derivatives their derivative atoms are
    mutually independent coordinates rather than chained functions.
    """

    __slots__ = ("independents", "functions", "dependents", "parameters",
                 "_deriv_cache", "_cache_lock")

    def __init__(self, independents, functions=None, dependents=(), parameters=None):
        self.independents = tuple(independents)
        self.functions = {k: tuple(v) for k, v in (functions or {}).items()}
        self.dependents = tuple(dependents)
        self.parameters = dict(parameters or {})
        for d in self.dependents:
            if d not in self.functions:
                raise ValueError(f"dependent {d!r} lacks an argument list")
        names = list(self.independents) + list(self.functions) + list(self.parameters)
        if len(set(names)) != len(names):
            raise ValueError("duplicate declarations in variable space")
        for f, args in self.functions.items():
            for a in args:
                if a not in self.independents and a not in self.functions:
                    raise ValueError(f"argument {a!r} of {f!r} is not declared")
        self._deriv_cache = {}
        self._cache_lock = threading.Lock()
        register_jet_args(self)

    # -- declaration queries --------------------------------------------------

    def is_declared(self, name):
        return (name in self.independents or name in self.functions
                or name in self.parameters)

    def args_of(self, name):
        return self.functions[name]

    def relation(self, name):
        return self.parameters.get(name)

    def extend(self, functions=None, parameters=None, dependents=()):
        """New space with additional declarations (names must be fresh)."""
        fns = dict(self.functions)
        fns.update(functions or {})
        pars = dict(self.parameters)
        pars.update(parameters or {})
        return VarSpace(self.independents, fns,
                        tuple(self.dependents) + tuple(dependents), pars)

    # -- expression constructors ------------------------------------------------

    def zero(self):
        return Expr(self, (), ())

    def num(self, q):
        q = Fraction(q)
        if q == 0:
            return self.zero()
        return Expr(self, ((MONO_ONE, q),), ())

    def one(self):
        return self.num(1)

    def atom(self, a):
        self.check_atom(a)
        return Expr(self, ((((a, 1),), Q1),), ())

    def sym(self, name):
        if not self.is_declared(name):
            raise NameError(f"undeclared symbol {name!r}")
        return self.atom(Sym(name))

    def jet(self, base, alpha):
        if base not in self.functions:
            raise NameError(f"undeclared function symbol {base!r}")
        alpha = tuple(alpha)
        if len(alpha) != len(self.functions[base]):
            raise ValueError(f"multi-index length mismatch for {base!r}")
        return self.atom(jet(base, alpha))

    def jet_by_names(self, base, varnames):
        """Derivative atom from argument names, e.g. ``('t', 'x', 'x')``."""
        args = self.args_of(base)
        alpha = [0] * len(args)
        for v in varnames:
            if v not in args:
                raise NameError(f"{base!r} has no argument {v!r}")
            alpha[args.index(v)] += 1
        return self.jet(base, alpha)

    def closed(self, func, arg):
        """Closed elementary function of a normalized argument."""
        if func not in CLOSED_FUNCS:
            raise NameError(f"unknown closed function {func!r}")
        if arg.den:
            raise ValueError("closed-function arguments must be denominator-free")
        if arg.is_zero():
            if func == "exp":
                return self.one()
            if func in ("tan", "tanh"):
                return self.zero()
            if func == "sech":
                return self.one()
            raise ZeroDivisionError(f"{func}(0) is undefined")
        return self.atom(Closed(func, arg))

    def check_atom(self, a):
        if isinstance(a, Sym):
            if not self.is_declared(a.name):
                raise NameError(f"undeclared symbol {a.name!r}")
        elif isinstance(a, Jet):
            if a.base not in self.functions:
                raise NameError(f"undeclared function symbol {a.base!r}")
            if len(a.alpha) != len(self.functions[a.base]):
                raise NameError(f"multi-index mismatch for {a.base!r}")
        elif isinstance(a, Closed):
            if a.func not in CLOSED_FUNCS:
                raise NameError(f"unknown closed function {a.func!r}")
            for sub in a.arg.atoms():
                if not isinstance(sub, Closed):
                    self.check_atom(sub)
        else:
            raise TypeError(f"not an atom: {a!r}")

    # -- derivative of a bare symbol with respect to a variable -------------------

    def _sym_derivative(self, name, var):
        key = (name, var)
        hit = self._deriv_cache.get(key)
        if hit is not None:
            return hit
        if name == var:
            out = self.one()
        elif name in self.parameters or name in self.independents:
            out = self.zero()
        elif name in self.functions:
            out = self.zero()
            args = self.functions[name]
            for i, a in enumerate(args):
                da = self._sym_derivative(a, var)
                if da.is_zero():
                    continue
                alpha = [0] * len(args)
                alpha[i] = 1
                out = out + self.atom(Jet(name, tuple(alpha))) * da
        else:
            raise NameError(f"undeclared symbol {name!r}")
        with self._cache_lock:
            self._deriv_cache[key] = out
        return out


# ---------------------------------------------------------------------------
# closed-function derivative closure rules


def _closed_rule(space, func, arg):
    c = lambda f: space.closed(f, arg)
    if func == "exp":
        return c("exp")
    if func == "tan":
        return space.one() + c("tan") * c("tan")
    if func == "tanh":
        return space.one() - c("tanh") * c("tanh")
    if func == "coth":
        return space.one() - c("coth") * c("coth")
    if func == "sech":
        return -(c("sech") * c("tanh"))
    if func == "csch":
        return -(c("csch") * c("coth"))
    raise NameError(func)


# ---------------------------------------------------------------------------
# normalization of raw monomial dictionaries


def _reduce_param_power(space, name, exp):
    """Expand ``name^exp`` under the side relation into {exponent: coeff}."""
    rel = space.relation(name)
    out = {exp: Q1}
    while True:
        over = [e for e in out if e >= rel.degree]
        if not over:
            return out
        e = over[0]
        c = out.pop(e)
        for te, tc in rel.tail.items():
            ne = e - rel.degree + te
            out[ne] = out.get(ne, Q0) + c * tc
            if out[ne] == 0:
                del out[ne]


def _rewrite_monomial(space, mono, coeff):
    """One rewriting step; None when the monomial is already normal."""
    exps = []
    for a, e in mono:
        if isinstance(a, Sym):
            rel = space.relation(a.name)
            if rel is not None and e >= rel.degree:
                rest = tuple(p for p in mono if p[0] is not a)
                parts = []
                for ne, nc in _reduce_param_power(space, a.name, e).items():
                    nm = mono_mul(rest, ((a, ne),) if ne else ())
                    parts.append((nm, coeff * nc))
                return parts
        elif isinstance(a, Closed):
            if a.func == "exp":
                exps.append((a, e))
            elif a.func in ("sech", "csch") and e >= 2:
                rest = tuple(p for p in mono if p[0] is not a)
                arg = a.arg.rebase(space)
                if a.func == "sech":
                    sq = space.one() - space.closed("tanh", arg) ** 2
                else:
                    sq = space.closed("coth", arg) ** 2 - space.one()
                repl = sq ** (e // 2)
                if e % 2:
                    repl = repl * space.atom(a)
                return [(mono_mul(rest, m2), coeff * c2) for m2, c2 in repl.num]
    if len(exps) > 1 or (exps and exps[0][1] > 1):
        rest = tuple(p for p in mono
                     if not (isinstance(p[0], Closed) and p[0].func == "exp"))
        total = space.zero()
        for a, e in exps:
            total = total + a.arg.rebase(space) * e
        if total.is_zero():
            return [(rest, coeff)]
        return [(mono_mul(rest, ((Closed("exp", total), 1),)), coeff)]
    return None


def _normalize_raw(space, raw):
    """Normalize a {monomial: coeff} dict under the space's rewrite rules."""
    out = {}
    work = list(raw.items())
    while work:
        mono, coeff = work.pop()
        if coeff == 0:
            continue
        parts = _rewrite_monomial(space, mono, coeff)
        if parts is None:
            c = out.get(mono, Q0) + coeff
            if c == 0:
                out.pop(mono, None)
            else:
                out[mono] = c
        else:
            work.extend(parts)
    return out


def _freeze(raw):
    return tuple(sorted(raw.items(), key=lambda p: mono_key(p[0]), reverse=True))


def _plain_mul(n1, n2):
    """Plain polynomial product of raw dicts, no rewriting."""
    out = {}
    for m1, c1 in n1.items():
        for m2, c2 in n2.items():
            m = mono_mul(m1, m2)
            c = out.get(m, Q0) + c1 * c2
            if c == 0:
                out.pop(m, None)
            else:
                out[m] = c
    return out


def _try_divide(num, base):
    """Exact plain division of raw dict ``num`` by ``base``, or None."""
    if not num:
        return {}
    rem = dict(num)
    quot = {}
    lm, lc = max(base.items(), key=lambda p: mono_key(p[0]))
    lm_d = dict(lm)
    guard = 10000
    while rem:
        guard -= 1
        if guard < 0:
            return None
        rm, rc = max(rem.items(), key=lambda p: mono_key(p[0]))
        rm_d = dict(rm)
        for a, e in lm_d.items():
            if rm_d.get(a, 0) < e:
                return None
        qm = tuple(sorted(((a, e - lm_d.get(a, 0)) for a, e in rm_d.items()
                           if e - lm_d.get(a, 0)), key=lambda p: p[0].key))
        qc = rc / lc
        quot[qm] = quot.get(qm, Q0) + qc
        for bm, bc in base.items():
            m = mono_mul(qm, bm)
            c = rem.get(m, Q0) - qc * bc
            if c == 0:
                rem.pop(m, None)
            else:
                rem[m] = c
    return quot


class Expr:
    """Immutable canonical differential-polynomial expression.

    ``num`` is the frozen (monomial, coefficient) tuple in descending
    monomial order; ``den`` is a tuple of (base Expr, exponent) pairs with
    primitive, positive-leading, denominator-free bases.
    """

    __slots__ = ("space", "num", "den", "_key", "_hash")

    def __init__(self, space, num, den):
        self.space = space
        self.num = num
        self.den = den
        self._key = None
        self._hash = None

    @staticmethod
    def _make(space, rawnum, rawden=()):
        num = _normalize_raw(space, rawnum)
        den = {}
        for b, e in rawden:
            if e:
                den[b] = den.get(b, 0) + e
        if not num:
            return Expr(space, (), ())
        for b in sorted(den, key=lambda x: x.key):
            while den[b] > 0:
                q = _try_divide(num, dict(b.num))
                if q is None:
                    break
                q2 = _normalize_raw(space, q)
                if _normalize_raw(space, _plain_mul(q2, dict(b.num))) != num:
                    break
                num = q2
                den[b] -= 1
                if not num:
                    return Expr(space, (), ())
        dent = tuple(sorted(((b, e) for b, e in den.items() if e > 0),
                            key=lambda p: p[0].key))
        return Expr(space, _freeze(num), dent)

    @property
    def key(self):
        if self._key is None:
            self._key = (tuple((mono_key(m), c) for m, c in self.num),
                         tuple((b.key, e) for b, e in self.den))
        return self._key

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self.key)
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        return self.key == other.key

    def is_zero(self):
        return not self.num

    def is_rational(self):
        return not self.den and (not self.num
                                 or (len(self.num) == 1 and self.num[0][0] == MONO_ONE))

    def as_rational(self):
        if not self.is_rational():
            raise ValueError(f"not a rational constant: {self!r}")
        return self.num[0][1] if self.num else Q0

    def atoms(self):
        """All atoms in numerator and denominator bases, recursing into
        closed-function arguments."""
        out = set()
        for m, _ in self.num:
            for a, _ in m:
                out.add(a)
                if isinstance(a, Closed):
                    out |= a.arg.atoms()
        for b, _ in self.den:
            out |= b.atoms()
        return out

    # -- arithmetic --------------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Expr):
            if other.space is not self.space:
                other = other.rebase(self.space)
            return other
        if isinstance(other, (int, Fraction)):
            return self.space.num(other)
        return None

    def __add__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        if other.is_zero():
            return self
        if self.is_zero():
            return other
        den = {b: e for b, e in self.den}
        for b, e in other.den:
            den[b] = max(den.get(b, 0), e)
        n1 = dict(self.num)
        n2 = dict(other.num)
        sden = dict(self.den)
        oden = dict(other.den)
        for b, e in den.items():
            for _ in range(e - sden.get(b, 0)):
                n1 = _plain_mul(n1, dict(b.num))
            for _ in range(e - oden.get(b, 0)):
                n2 = _plain_mul(n2, dict(b.num))
        for m, c in n2.items():
            n1[m] = n1.get(m, Q0) + c
        return Expr._make(self.space, n1, tuple(den.items()))

    __radd__ = __add__

    def __neg__(self):
        return Expr(self.space, tuple((m, -c) for m, c in self.num), self.den)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        if self.is_zero() or other.is_zero():
            return self.space.zero()
        raw = _plain_mul(dict(self.num), dict(other.num))
        den = {b: e for b, e in self.den}
        for b, e in other.den:
            den[b] = den.get(b, 0) + e
        return Expr._make(self.space, raw, tuple(den.items()))

    __rmul__ = __mul__

    def __pow__(self, k):
        if not isinstance(k, int):
            return NotImplemented
        if k < 0:
            return self.space.one() / (self ** (-k))
        out = self.space.one()
        base = self
        while k:
            if k & 1:
                out = out * base
            k >>= 1
            if k:
                base = base * base
        return out

    def __truediv__(self, other):
        if isinstance(other, (int, Fraction)):
            q = Fraction(other)
            if q == 0:
                raise ZeroDivisionError("division by zero")
            return Expr(self.space, tuple((m, c / q) for m, c in self.num), self.den)
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        if other.is_zero():
            raise ZeroDivisionError("division by zero expression")
        return self * other._inverse()

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def _inverse(self):
        """1/self.  Monomials of invertible atoms (parameters with a pure
        quadratic side relation) are rationalized; anything else becomes a
        denominator base, assumed nonzero."""
        sp = self.space
        if self.den:
            inv = Expr(sp, self.num, ())._inverse()
            for b, e in self.den:
                inv = inv * b ** e
            return inv
        if len(self.num) == 1:
            mono, coeff = self.num[0]
            out_num = {MONO_ONE: 1 / coeff}
            den = {}
            for a, e in mono:
                handled = False
                if isinstance(a, Sym):
                    rel = sp.relation(a.name)
                    if rel is not None and rel.degree == 2 and set(rel.tail) <= {0}:
                        c0 = rel.tail.get(0, Q0)
                        if c0 != 0:
                            out_num = _plain_mul(out_num, {((a, e),): Q1})
                            out_num = {m: c / (c0 ** e) for m, c in out_num.items()}
                            handled = True
                if not handled:
                    base = Expr._make(sp, {((a, 1),): Q1})
                    den[base] = den.get(base, 0) + e
            return Expr._make(sp, out_num, tuple(den.items()))
        cont, prim = self.primitive()
        if prim.num[0][1] < 0:
            prim = -prim
            cont = -cont
        return Expr._make(sp, {MONO_ONE: 1 / cont}, ((prim, 1),))

    # -- content and primitive part -------------------------------------------

    def content(self):
        """Positive rational content of the numerator (0 for zero)."""
        if not self.num:
            return Q0
        g = 0
        l = 1
        for _, c in self.num:
            g = math.gcd(g, abs(c.numerator))
            l = l * c.denominator // math.gcd(l, c.denominator)
        return Fraction(g, l)

    def primitive(self):
        """(content, primitive part); the primitive part keeps the sign."""
        c = self.content()
        if c == 0:
            return Q0, self
        return c, Expr(self.space, tuple((m, q / c) for m, q in self.num), self.den)

    def monomial_content(self, keep: Callable[[Atom], bool]):
        """Largest monomial over atoms passing ``keep`` that divides every
        numerator term; returns (stripped expression, content monomial)."""
        if not self.num:
            return self, self.space.one()
        common = None
        for m, _ in self.num:
            d = {a: e for a, e in m if keep(a)}
            if common is None:
                common = d
            else:
                common = {a: min(e, common[a]) for a, e in d.items() if a in common}
            if not common:
                return self, self.space.one()
        newnum = {}
        for m, c in self.num:
            nm = tuple(sorted(((a, e - common.get(a, 0)) for a, e in m
                               if e - common.get(a, 0)), key=lambda p: p[0].key))
            newnum[nm] = newnum.get(nm, Q0) + c
        stripped = Expr._make(self.space, newnum, self.den)
        mono = tuple(sorted(common.items(), key=lambda p: p[0].key))
        return stripped, Expr._make(self.space, {mono: Q1})

    # -- views in a single atom --------------------------------------------------

    def degree_in(self, atom):
        d = 0
        for m, _ in self.num:
            for a, e in m:
                if a is atom and e > d:
                    d = e
        return d

    def coefficient_of(self, atom, power):
        """Coefficient of ``atom^power`` (collecting over that atom only)."""
        raw = {}
        for m, c in self.num:
            e = dict(m).get(atom, 0)
            if e == power:
                nm = tuple(p for p in m if p[0] is not atom)
                raw[nm] = raw.get(nm, Q0) + c
        return Expr._make(self.space, raw, self.den)

    # -- rebasing -----------------------------------------------------------------

    def rebase(self, space):
        """Reinterpret in another space (atoms are re-validated)."""
        if space is self.space:
            return self
        for a in self.atoms():
            space.check_atom(a)
        den = tuple((b.rebase(space), e) for b, e in self.den)
        return Expr(space, self.num, den)

    # -- derivatives ---------------------------------------------------------------

    def total_derivative(self, var):
        """Total derivative D_var with the chain rule through every declared
        function symbol.  In a space where ``u`` is a dependent of (t, x)
        this is the jet-space total derivative; where ``u`` is independent
        it is the coordinate total derivative of determining systems."""
        sp = self.space
        if var not in sp.independents and var not in sp.functions:
            raise NameError(f"undeclared variable {var!r}")
        out = sp.zero()
        for m, c in self.num:
            for a, e in m:
                da = _atom_total_derivative(sp, a, var)
                if da.is_zero():
                    continue
                restm = tuple((b, (x - 1 if b is a else x)) for b, x in m)
                restm = tuple((b, x) for b, x in restm if x)
                out = out + Expr._make(sp, {restm: c * e}) * da
        if not self.den:
            return out
        res = out
        for b, e in self.den:
            res = res / b ** e
        numer = Expr(sp, self.num, ())
        for b, e in self.den:
            db = b.total_derivative(var)
            if db.is_zero():
                continue
            rest = numer * db * (-e) / b ** (e + 1)
            for b2, e2 in self.den:
                if b2 is not b:
                    rest = rest / b2 ** e2
            res = res + rest
        return res

    def partial(self, target):
        """Formal partial derivative with respect to atom ``target``.

        Jet coordinates (independents, parameters, dependents and their
        derivative atoms) are mutually independent; non-dependent function
        symbols and closed functions chain through their arguments.
        """
        sp = self.space
        out = sp.zero()
        for m, c in self.num:
            for a, e in m:
                da = _atom_partial(sp, a, target)
                if da.is_zero():
                    continue
                restm = tuple((b, (x - 1 if b is a else x)) for b, x in m)
                restm = tuple((b, x) for b, x in restm if x)
                out = out + Expr._make(sp, {restm: c * e}) * da
        if not self.den:
            return out
        res = out
        for b, e in self.den:
            res = res / b ** e
        numer = Expr(sp, self.num, ())
        for b, e in self.den:
            db = b.partial(target)
            if db.is_zero():
                continue
            rest = numer * db * (-e) / b ** (e + 1)
            for b2, e2 in self.den:
                if b2 is not b:
                    rest = rest / b2 ** e2
            res = res + rest
        return res

    def substitute(self, bindings, consequences=False):
        return substitute(self, bindings, consequences)

    def single_atom(self):
        """The atom of a bare single-atom expression, else TypeError."""
        if not self.den and len(self.num) == 1:
            m, c = self.num[0]
            if c == 1 and len(m) == 1 and m[0][1] == 1:
                return m[0][0]
        raise TypeError(f"not a bare atom: {self!r}")

    def __repr__(self):
        return expr_text(self)


def _atom_total_derivative(space, a, var):
    if isinstance(a, Sym):
        return space._sym_derivative(a.name, var)
    if isinstance(a, Jet):
        out = space.zero()
        args = space.functions[a.base]
        for i, argname in enumerate(args):
            da = space._sym_derivative(argname, var)
            if da.is_zero():
                continue
            alpha = list(a.alpha)
            alpha[i] += 1
            out = out + space.atom(Jet(a.base, tuple(alpha))) * da
        return out
    if isinstance(a, Closed):
        arg = a.arg.rebase(space)
        darg = arg.total_derivative(var)
        if darg.is_zero():
            return darg
        return _closed_rule(space, a.func, arg) * darg
    raise TypeError(a)


def _atom_partial(space, a, target):
    if a is target:
        return space.one()
    if isinstance(a, Closed):
        arg = a.arg.rebase(space)
        darg = arg.partial(target)
        if darg.is_zero():
            return darg
        return _closed_rule(space, a.func, arg) * darg
    if isinstance(target, Sym):
        name = None
        alpha = None
        if isinstance(a, Sym) and a.name in space.functions \
                and a.name not in space.dependents:
            name = a.name
            alpha = (0,) * len(space.functions[name])
        elif isinstance(a, Jet) and a.base not in space.dependents:
            name = a.base
            alpha = a.alpha
        if name is not None:
            args = space.functions[name]
            if target.name in args:
                i = args.index(target.name)
                na = list(alpha)
                na[i] += 1
                return space.atom(Jet(name, tuple(na)))
    return space.zero()


# ---------------------------------------------------------------------------
# substitution with differential consequences


def substitute(e, bindings, consequences=False):
    """Replace bound atoms by expressions.

    With ``consequences`` a binding ``(base, beta) -> R`` also sends every
    ``(base, gamma)`` with ``gamma >= beta`` componentwise to the matching
    derivative of ``R``; passes repeat until no bound atom remains.  A
    binding whose value references the bound derivative or a derivative of
    it raises SubstitutionCycleError.
    """
    space = e.space
    table = {}
    for a, val in bindings.items():
        if isinstance(a, str):
            a = Sym(a)
        elif isinstance(a, Expr):
            a = a.single_atom()
        space.check_atom(a)
        if isinstance(a, Closed):
            raise TypeError("cannot bind a closed-function atom")
        base = a.name if isinstance(a, Sym) else a.base
        beta = a.alpha if isinstance(a, Jet) else (0,) * len(space.functions.get(base, ()))
        if isinstance(val, (int, Fraction)):
            val = space.num(val)
        val = val.rebase(space)
        for va in val.atoms():
            if isinstance(va, Sym) and va.name == base and not any(beta):
                raise SubstitutionCycleError(f"binding for {base!r} references itself")
            if isinstance(va, Jet) and va.base == base and len(va.alpha) == len(beta) \
                    and all(g >= b for g, b in zip(va.alpha, beta)):
                raise SubstitutionCycleError(
                    f"binding for {base!r}@{beta} references a derivative of itself")
        table[(base, beta)] = val
    by_base = {}
    for (base, beta), val in table.items():
        by_base.setdefault(base, []).append((beta, val))

    deriv_memo = {}

    def replacement(a):
        if isinstance(a, Sym):
            base = a.name
            gamma = (0,) * len(space.functions.get(base, ()))
        else:
            base, gamma = a.base, a.alpha
        cands = [(beta, val) for beta, val in by_base.get(base, ())
                 if len(beta) == len(gamma)
                 and all(g >= b for g, b in zip(gamma, beta))]
        if not cands:
            return None
        beta, val = max(cands, key=lambda p: (sum(p[0]), p[0]))
        key = (base, beta, gamma)
        if key in deriv_memo:
            return deriv_memo[key]
        out = val
        for i, argname in enumerate(space.functions.get(base, ())):
            for _ in range(gamma[i] - beta[i]):
                out = out.total_derivative(argname)
        deriv_memo[key] = out
        return out

    current = e
    for _ in range(200):
        hit = False
        rawfree = {}
        terms = []
        for m, c in current.num:
            plain = []
            repl_factors = []
            for a, exp in m:
                rep = None
                if isinstance(a, Closed):
                    if _mentions(a.arg, by_base):
                        arg0 = a.arg.rebase(space)
                        newarg = substitute(arg0, bindings, consequences)
                        if newarg != arg0:
                            rep = space.closed(a.func, newarg)
                else:
                    key = _direct_key(space, a)
                    if key in table or consequences:
                        rep = replacement(a)
                        if rep is not None and not consequences and key not in table:
                            rep = None
                if rep is None:
                    plain.append((a, exp))
                else:
                    hit = True
                    repl_factors.append((rep, exp))
            if not repl_factors:
                mono = tuple(plain)
                rawfree[mono] = rawfree.get(mono, Q0) + c
            else:
                term = Expr._make(space, {tuple(plain): c})
                for rep, exp in repl_factors:
                    term = term * rep ** exp
                terms.append(term)
        flat = Expr._make(space, rawfree)
        while len(terms) > 1:
            terms = [terms[i] + terms[i + 1] if i + 1 < len(terms) else terms[i]
                     for i in range(0, len(terms), 2)]
        if terms:
            flat = flat + terms[0]
        out = flat
        for b, eexp in current.den:
            nb = substitute(b, bindings, consequences) if _mentions(b, by_base) else b
            if nb != b:
                hit = True
            if nb.is_zero():
                raise ZeroDivisionError("substitution sent a denominator to zero")
            out = out / nb ** eexp
        current = out
        if not hit:
            return current
    raise SubstitutionCycleError("substitution did not reach a fixpoint")


def _direct_key(space, a):
    if isinstance(a, Sym):
        return (a.name, (0,) * len(space.functions.get(a.name, ())))
    return (a.base, a.alpha)


def _mentions(e, by_base):
    for a in e.atoms():
        if isinstance(a, Sym) and a.name in by_base:
            return True
        if isinstance(a, Jet) and a.base in by_base:
            return True
    return False


# ---------------------------------------------------------------------------
# coefficient collection


def collect_coefficients(e, is_parametric):
    """Split ``e`` by monomials in the atoms selected by ``is_parametric``.

    Returns {parametric monomial: coefficient Expr}.  ``e`` vanishes
    identically in the parametric atoms iff every coefficient is zero.  The
    denominator must be free of parametric atoms; it is carried onto every
    coefficient.
    """
    for b, _ in e.den:
        for a in b.atoms():
            if is_parametric(a):
                raise ValueError("denominator contains parametric atoms")
    groups = {}
    for m, c in e.num:
        par = tuple((a, x) for a, x in m if is_parametric(a))
        rest = tuple((a, x) for a, x in m if not is_parametric(a))
        groups.setdefault(par, {})
        groups[par][rest] = groups[par].get(rest, Q0) + c
    out = {}
    for par, raw in groups.items():
        coeff = Expr._make(e.space, raw, e.den)
        if not coeff.is_zero():
            out[par] = coeff
    return out


def normalize(e):
    """Identity on canonical forms (public zero-test hook)."""
    return e


# ---------------------------------------------------------------------------
# text form (the CLI grammar); the parser lives in grammar.py


_JET_ARGS: dict = {}


def register_jet_args(space):
    """Record argument lists so derivative atoms print with name suffixes."""
    with _INTERN_LOCK:
        for f, args in space.functions.items():
            _JET_ARGS[f] = args


def atom_text(a):
    if isinstance(a, Sym):
        return a.name
    if isinstance(a, Jet):
        args = _JET_ARGS.get(a.base)
        if args is None or len(args) != len(a.alpha):
            suffix = ",".join(str(i) for i in a.alpha)
            return f"{a.base}_[{suffix}]"
        s = "".join(name * k for name, k in zip(args, a.alpha))
        return f"{a.base}_{s}"
    if isinstance(a, Closed):
        return f"{a.func}({expr_text(a.arg)})"
    raise TypeError(a)


def _mono_text(m, c):
    if not m:
        return str(c)
    factors = []
    for a, e in m:
        t = atom_text(a)
        factors.append(t if e == 1 else f"{t}^{e}")
    body = "*".join(factors)
    if c == 1:
        return body
    if c == -1:
        return "-" + body
    return f"{c}*{body}"


def expr_text(e):
    if e.is_zero():
        return "0"
    terms = []
    for i, (m, c) in enumerate(e.num):
        t = _mono_text(m, c)
        if i == 0:
            terms.append(t)
        elif t.startswith("-"):
            terms.append(" - " + t[1:])
        else:
            terms.append(" + " + t)
    num = "".join(terms)
    if not e.den:
        return num
    dfac = []
    for b, k in e.den:
        bt = f"({expr_text(b)})"
        dfac.append(bt if k == 1 else f"{bt}^{k}")
    den = "*".join(dfac)
    if len(e.num) > 1 or e.num[0][0] == MONO_ONE and "/" in str(e.num[0][1]):
        num = f"({num})"
    elif len(e.num) == 1 and e.num[0][1] != 1 and e.num[0][0] != MONO_ONE:
        num = f"({num})"
    if len(dfac) > 1:
        den = f"({den})"
    return f"{num}/{den}"
