"""Differential polynomial structure under a rank.

Implements leaders/initials/separants, reducedness, ascending chains,
certified Ritt-Wu pseudo-reduction (every elimination step is recorded so
that ``IS * f = sum_i sum_beta Q_i^beta D^beta(g_i) + r`` holds exactly),
and the chain-construction saturation loop of Wu's algorithm with optional
integrability (delta-pair) saturation.

All functions are pure and re-entrant; chains and certificates are
immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .errors import DegenerateError, InconsistentSystemError
from .expr import Expr, Jet, Sym, jet

Q1 = Fraction(1)


@dataclass(frozen=True)
class Rank:
    """Graded lexicographic order on derivatives of the unknowns.

    Derivatives compare by total order first, then by unknown precedence
    (``unknowns`` ascending), then lexicographically on the multi-index with
    the highest-precedence argument (per ``base``, ascending) weighted most.
    The order-zero unknown itself participates (as the lowest derivative of
    its unknown).
    """

    base: tuple
    unknowns: tuple

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(self.base))
        object.__setattr__(self, "unknowns", tuple(self.unknowns))

    def is_unknown_atom(self, a, space):
        if isinstance(a, Sym):
            return a.name in self.unknowns
        if isinstance(a, Jet):
            return a.base in self.unknowns
        return False

    def key(self, a, space):
        """Sort key of an unknown derivative atom."""
        if isinstance(a, Sym):
            name = a.name
            alpha = (0,) * len(space.functions[name])
        else:
            name = a.base
            alpha = a.alpha
        args = space.functions[name]
        lex = tuple(alpha[args.index(v)] if v in args else 0
                    for v in reversed(self.base))
        return (sum(alpha), self.unknowns.index(name), lex)

    def compare(self, a, b, space):
        ka, kb = self.key(a, space), self.key(b, space)
        return (ka > kb) - (ka < kb)


def unknown_atoms(e: Expr, rank: Rank):
    out = []
    for m, _ in e.num:
        for a, _x in m:
            if rank.is_unknown_atom(a, e.space):
                out.append(a)
    return out


def leader_atom(e: Expr, rank: Rank):
    atoms = unknown_atoms(e, rank)
    if not atoms:
        return None
    return max(atoms, key=lambda a: rank.key(a, e.space))


def _proper_derivative_of(a, lead, space):
    """True when atom ``a`` is a proper derivative of unknown derivative ``lead``."""
    if isinstance(lead, Sym):
        lb, la = lead.name, (0,) * len(space.functions[lead.name])
    else:
        lb, la = lead.base, lead.alpha
    if isinstance(a, Sym):
        ab, aa = a.name, (0,) * len(space.functions.get(a.name, ()))
    elif isinstance(a, Jet):
        ab, aa = a.base, a.alpha
    else:
        return False
    if ab != lb or len(aa) != len(la):
        return False
    return all(x >= y for x, y in zip(aa, la)) and aa != la


class DiffPoly:
    """An Expr viewed under a rank: leader, initial, separant."""

    __slots__ = ("expr", "rank", "_leader", "_initial", "_separant")

    def __init__(self, expr: Expr, rank: Rank):
        if expr.den:
            raise ValueError("chain members must be denominator-free")
        self.expr = expr
        self.rank = rank
        self._leader = leader_atom(expr, rank)
        self._initial = None
        self._separant = None

    @property
    def degenerate(self):
        return self._leader is None

    @property
    def leader(self):
        if self._leader is None:
            raise DegenerateError(f"no unknown derivative in {self.expr!r}")
        return self._leader

    @property
    def leader_degree(self):
        return self.expr.degree_in(self.leader)

    @property
    def initial(self):
        if self._initial is None:
            self._initial = self.expr.coefficient_of(self.leader, self.leader_degree)
        return self._initial

    @property
    def separant(self):
        if self._separant is None:
            self._separant = self.expr.partial(self.leader)
        return self._separant

    def __repr__(self):
        return f"DiffPoly({self.expr!r})"


def leader(p: DiffPoly):
    return p.leader


def initial(p: DiffPoly):
    return p.initial


def separant(p: DiffPoly):
    return p.separant


def is_reduced(f: Expr | DiffPoly, g: DiffPoly) -> bool:
    """f contains no proper derivative of leader(g) and its degree in
    leader(g) is below g's."""
    fe = f.expr if isinstance(f, DiffPoly) else f
    lead = g.leader
    space = fe.space
    for a in unknown_atoms(fe, g.rank):
        if _proper_derivative_of(a, lead, space):
            return False
    return fe.degree_in(lead) < g.leader_degree


class Chain:
    """Differential ascending chain: strictly increasing leaders, each member
    reduced against all earlier ones."""

    __slots__ = ("members", "rank")

    def __init__(self, members, rank: Rank, check=True):
        mem = tuple(m if isinstance(m, DiffPoly) else DiffPoly(m, rank)
                    for m in members)
        if check and not _chain_ok(mem, rank):
            raise ValueError("not an ascending chain under the rank")
        self.members = mem
        self.rank = rank

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    def exprs(self):
        return [m.expr for m in self.members]

    def is_product(self) -> Expr:
        """Product of initials and separants.  For a member linear in its
        leader the separant equals the initial and is not repeated, matching
        the reported corpus values."""
        if not self.members:
            raise ValueError("empty chain")
        space = self.members[0].expr.space
        out = space.one()
        for m in self.members:
            out = out * m.initial
            if m.leader_degree > 1:
                out = out * m.separant
        return out

    def __repr__(self):
        return "Chain[" + "; ".join(repr(m.expr) for m in self.members) + "]"


def _chain_ok(members, rank):
    if not members:
        return False
    space = members[0].expr.space
    for m in members:
        if m.degenerate:
            return False
    for i in range(1, len(members)):
        if rank.compare(members[i - 1].leader, members[i].leader, space) >= 0:
            return False
    for j in range(len(members)):
        for i in range(j):
            if not is_reduced(members[j], members[i]):
                return False
    return True


def is_chain(polys, rank: Rank) -> bool:
    """Conditions (a) and (b) for a list given in ascending order."""
    try:
        mem = tuple(p if isinstance(p, DiffPoly) else DiffPoly(p, rank) for p in polys)
    except ValueError:
        return False
    return _chain_ok(mem, rank)


@dataclass
class ReductionCertificate:
    """Record of one pseudo-reduction: IS*f = sum_i sum_beta Q D^beta(g_i) + r."""

    input: Expr
    chain: Chain
    is_factor: Expr
    terms: list  # [(member index, [(beta tuple, coefficient Expr), ...]), ...]
    remainder: Expr

    def verify(self) -> bool:
        """Re-expand the identity and test it normalizes to zero exactly."""
        space = self.input.space
        acc = self.is_factor * self.input - self.remainder
        for i, ops in self.terms:
            g = self.chain.members[i].expr
            for beta, q in ops:
                dg = g
                args = _member_args(self.chain.members[i], space)
                for axis, cnt in zip(args, beta):
                    for _ in range(cnt):
                        dg = dg.total_derivative(axis)
                acc = acc - q * dg
        return acc.is_zero()


def _member_args(member: DiffPoly, space):
    lead = member.leader
    base = lead.name if isinstance(lead, Sym) else lead.base
    return space.functions[base]


def _lead_info(a, space):
    if isinstance(a, Sym):
        return a.name, (0,) * len(space.functions[a.name])
    return a.base, a.alpha


def prem(f: Expr, chain: Chain) -> ReductionCertificate:
    """Certified Ritt-Wu pseudo-reduction of ``f`` by an ascending chain.

    Repeatedly selects the highest-ranked offending derivative, eliminates
    proper derivatives via the separant of the best-matching member and
    leader powers via its initial, multiplying through only as needed; every
    factor is recorded in the IS product and every subtracted multiple in
    the certificate terms.
    """
    rank = chain.rank
    space = f.space
    if f.den:
        raise ValueError("pseudo-reduction expects a denominator-free input")
    r = f
    is_factor = space.one()
    terms = {i: {} for i in range(len(chain.members))}

    def scale(c: Expr):
        nonlocal is_factor, r
        is_factor = is_factor * c
        r = r * c
        for ops in terms.values():
            for beta in list(ops):
                ops[beta] = ops[beta] * c

    guard = 10000
    while True:
        guard -= 1
        if guard < 0:
            raise RuntimeError("pseudo-reduction did not terminate")
        best = None
        for a in set(unknown_atoms(r, rank)):
            ab, aa = _lead_info(a, space)
            for i, g in enumerate(chain.members):
                gb, ga = _lead_info(g.leader, space)
                if ab != gb or len(aa) != len(ga):
                    continue
                if not all(x >= y for x, y in zip(aa, ga)):
                    continue
                proper = aa != ga
                if not proper and r.degree_in(a) < g.leader_degree:
                    continue
                cand = (rank.key(a, space), rank.key(g.leader, space), a, i, proper)
                if best is None or cand[:2] > best[:2]:
                    best = cand
        if best is None:
            break
        _, _, a, i, proper = best
        g = chain.members[i]
        gb, ga = _lead_info(g.leader, space)
        ab, aa = _lead_info(a, space)
        if proper:
            beta = tuple(x - y for x, y in zip(aa, ga))
            h = g.expr
            args = space.functions[gb]
            for axis, cnt in zip(args, beta):
                for _ in range(cnt):
                    h = h.total_derivative(axis)
            sep = g.separant
            # h = sep * a + tail, degree 1 in a
            while True:
                d = r.degree_in(a)
                if d == 0:
                    break
                lc = r.coefficient_of(a, d)
                scale(sep)
                q = lc * space.atom(a) ** (d - 1)
                r = r - q * h
                terms[i][beta] = terms[i].get(beta, space.zero()) + q
        else:
            ini = g.initial
            dg = g.leader_degree
            while True:
                d = r.degree_in(a)
                if d < dg:
                    break
                lc = r.coefficient_of(a, d)
                scale(ini)
                q = lc * space.atom(a) ** (d - dg)
                r = r - q * g.expr
                beta = (0,) * len(ga)
                terms[i][beta] = terms[i].get(beta, space.zero()) + q
    tlist = [(i, sorted(((b, q) for b, q in ops.items() if not q.is_zero()),
                        key=lambda p: p[0]))
             for i, ops in sorted(terms.items()) if ops]
    tlist = [(i, ops) for i, ops in tlist if ops]
    return ReductionCertificate(f, chain, is_factor, tlist, r)


def reduce_guarded(f: Expr, members, rank: Rank, multiplier_ok,
                   trim=False) -> Expr:
    """Remainder of pseudo-reduction by a list of polynomials, performing
    only eliminations whose initial/separant multiplier passes
    ``multiplier_ok``.  Used for zero-set-preserving inter-reduction.

    With ``trim`` the running polynomial is divided by its rational content
    and by any common base-field monomial after each elimination; base-field
    elements are units of the coefficient field, so this only rescales the
    remainder and keeps intermediate growth bounded.
    """
    space = f.space

    def _trim(e):
        if e.is_zero():
            return e
        e, _ = e.monomial_content(
            lambda a: isinstance(a, Sym) and a.name not in rank.unknowns)
        _, e = e.primitive()
        return e

    r = f
    guard = 10000
    while True:
        guard -= 1
        if guard < 0:
            raise RuntimeError("guarded reduction did not terminate")
        best = None
        for a in set(unknown_atoms(r, rank)):
            ab, aa = _lead_info(a, space)
            for g in members:
                gb, ga = _lead_info(g.leader, space)
                if ab != gb or len(aa) != len(ga):
                    continue
                if not all(x >= y for x, y in zip(aa, ga)):
                    continue
                proper = aa != ga
                if not proper and r.degree_in(a) < g.leader_degree:
                    continue
                mult = g.separant if proper else g.initial
                if not multiplier_ok(mult):
                    continue
                cand = (rank.key(a, space), rank.key(g.leader, space), a, g, proper)
                if best is None or cand[:2] > best[:2]:
                    best = cand
        if best is None:
            return r
        _, _, a, g, proper = best
        gb, ga = _lead_info(g.leader, space)
        ab, aa = _lead_info(a, space)
        if proper:
            beta = tuple(x - y for x, y in zip(aa, ga))
            h = g.expr
            args = space.functions[gb]
            for axis, cnt in zip(args, beta):
                for _ in range(cnt):
                    h = h.total_derivative(axis)
            sep = g.separant
            while True:
                d = r.degree_in(a)
                if d == 0:
                    break
                lc = r.coefficient_of(a, d)
                r = sep * r - lc * space.atom(a) ** (d - 1) * h
                if trim:
                    r = _trim(r)
        else:
            ini = g.initial
            dg = g.leader_degree
            while True:
                d = r.degree_in(a)
                if d < dg:
                    break
                lc = r.coefficient_of(a, d)
                r = ini * r - lc * space.atom(a) ** (d - dg) * g.expr
                if trim:
                    r = _trim(r)


# ---------------------------------------------------------------------------
# Wu's chain construction


def _content_free(e: Expr):
    c, p = e.primitive()
    return p


def _poly_sort_key(p: DiffPoly, space):
    """Candidate order for basic-set extraction: leader rank, then leader
    degree (so lower-degree members can always reduce higher ones, which
    makes the saturation loop stall-free), then fewest monomials, then
    smallest normal form."""
    return (p.rank.key(p.leader, space), p.leader_degree,
            len(p.expr.num), p.expr.key)


def basic_set(polys, rank: Rank):
    """Greedy minimal ascending chain from a set of nondegenerate polys.

    Candidates of equal leader rank are tie-broken by fewest monomials,
    then lowest leader degree, then smallest normal form.
    """
    space = polys[0].expr.space
    pool = sorted(polys, key=lambda p: _poly_sort_key(p, space))
    chain = []
    for p in pool:
        if all(rank.compare(p.leader, q.leader, space) > 0 and is_reduced(p, q)
               for q in chain):
            chain.append(p)
    return chain


def _delta_pairs(members, rank, space):
    """Integrability pairs: members whose leaders are incomparable
    derivatives of the same unknown."""
    out = []
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            bi, ai = _lead_info(members[i].leader, space)
            bj, aj = _lead_info(members[j].leader, space)
            if bi != bj:
                continue
            lcm = tuple(max(x, y) for x, y in zip(ai, aj))
            if lcm == ai or lcm == aj:
                continue
            out.append((i, j, lcm))
    return out


def _delta_poly(gi, gj, lcm, space):
    bi, ai = _lead_info(gi.leader, space)
    args = space.functions[bi]
    di = gi.expr
    for axis, cnt in zip(args, tuple(x - y for x, y in zip(lcm, ai))):
        for _ in range(cnt):
            di = di.total_derivative(axis)
    bj, aj = _lead_info(gj.leader, space)
    dj = gj.expr
    for axis, cnt in zip(args, tuple(x - y for x, y in zip(lcm, aj))):
        for _ in range(cnt):
            dj = dj.total_derivative(axis)
    return gj.separant * di - gi.separant * dj


def prem_remainder(f: Expr, members, rank: Rank, trim=False) -> Expr:
    """Pseudo-remainder without certificate bookkeeping (used by the
    saturation loop, where only remainders matter)."""
    return reduce_guarded(f, members, rank, lambda m: True, trim=trim)


def wu_chain(system, rank: Rank, delta=False) -> Chain:
    """Saturation loop of Wu's algorithm.

    Repeatedly extracts a basic set (a minimal ascending chain of the pool)
    and pseudo-reduces the remaining polynomials by it.  The first nonzero
    remainder is adjoined and the loop restarts, so the chain strengthens as
    early as possible; polynomials that reduce to zero are set aside and
    re-verified against the final chain before returning, so every input
    has pseudo-remainder zero with respect to the result.  With ``delta``
    the integrability pairs of the converged chain are reduced as well and
    any nonzero remainder adjoined.  Remainders are divided by rational and
    base-field monomial content (units of the coefficient field).  A
    nonzero unknown-free remainder raises InconsistentSystemError.
    """
    space = None
    pool = {}
    parked = {}

    def tidy(e):
        e2, _ = e.monomial_content(
            lambda a: isinstance(a, Sym) and a.name not in rank.unknowns)
        _, p = e2.primitive()
        return p

    for e in system:
        if isinstance(e, DiffPoly):
            e = e.expr
        space = e.space
        if e.is_zero():
            continue
        p = DiffPoly(tidy(e), rank)
        if p.degenerate:
            raise InconsistentSystemError(
                f"unknown-free nonzero polynomial {e!r}", witness=e)
        pool[p.expr.key] = p
    if not pool:
        raise ValueError("empty system")

    def adjoin_remainder(r):
        r = tidy(r)
        rp = DiffPoly(r, rank)
        if rp.degenerate:
            raise InconsistentSystemError(
                f"reduction produced nonzero base-field remainder {r!r}",
                witness=r)
        if rp.expr.key in pool:
            return False
        pool[rp.expr.key] = rp
        return True

    guard = 5000
    while True:
        guard -= 1
        if guard < 0:
            raise RuntimeError("chain construction did not stabilize")
        polys = sorted(pool.values(), key=lambda p: _poly_sort_key(p, space))
        basic = basic_set(polys, rank)
        chain = Chain(basic, rank, check=False)
        rest = [p for p in polys if all(p is not b for b in basic)]
        rest.sort(key=lambda p: (len(p.expr.num), _poly_sort_key(p, space)))
        progressed = False
        for p in rest:
            r = prem_remainder(p.expr, basic, rank, trim=True)
            if r.is_zero():
                parked[p.expr.key] = p
                pool.pop(p.expr.key)
                continue
            if adjoin_remainder(r):
                # p is implied by the basic set together with its remainder
                parked[p.expr.key] = p
                pool.pop(p.expr.key)
                progressed = True
                break
            raise RuntimeError(
                "saturation stalled: nonzero remainder already in pool")
        if progressed:
            continue
        # converged against the current basic set; re-verify parked members
        requeued = False
        for key, p in sorted(parked.items()):
            r = prem_remainder(p.expr, basic, rank, trim=True)
            if r.is_zero():
                continue
            parked.pop(key)
            pool[key] = p
            requeued = True
            break
        if requeued:
            continue
        if delta:
            adjoined = False
            for i, j, lcm in _delta_pairs(chain.members, rank, space):
                dp = _delta_poly(chain.members[i], chain.members[j], lcm, space)
                r = prem_remainder(dp, chain.members, rank, trim=True)
                if r.is_zero():
                    continue
                if adjoin_remainder(r):
                    adjoined = True
                    break
                raise RuntimeError(
                    "delta saturation stalled: remainder already in pool")
            if adjoined:
                continue
        return chain
