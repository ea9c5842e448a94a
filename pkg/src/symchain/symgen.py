"""Determining-system generation for classical and nonclassical symmetries.

The pipeline, for a PDE system given in solved form ``u_beta = R``:

* classical: prolong the generator with unknown infinitesimals (one per
  independent and dependent, opaque functions of all of z), expand the
  invariance expression of each equation, substitute the principal
  derivatives with all differential consequences, and collect coefficients
  of the remaining parametric jet monomials;
* nonclassical (regular branch, first slot normalized to 1): additionally
  impose the invariant-surface bindings ``u_{x1} -> eta - sum xi_i u_{xi}``,
  triangularize the resulting on-manifold constraints into substitution
  pivots, and collect on the reduced criterion.

Determining polynomials are returned denominator-free, content-free,
deduplicated, inter-reduced with base-field multipliers only (so the zero
set is preserved exactly), and deterministically ordered.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .diffalg import DiffPoly, Rank, leader_atom, reduce_guarded
from .errors import (InconsistentSystemError, SolvedFormError,
                     UnsupportedBranchError)
from .expr import Expr, Jet, Sym, VarSpace, collect_coefficients, substitute
from .grammar import (ProblemFile, _relation_from_text, parse_expression,
                      parse_problem)


def primed(name):
    return name + "'"


@dataclass
class Problem:
    """A parsed problem: spaces, ranks, solved-form equations, candidates."""

    pf: ProblemFile
    jet_space: VarSpace
    det_space: VarSpace
    equations: list            # [(dep, beta tuple, rhs Expr in jet_space)]
    order: int
    classical_rank: Rank
    nonclassical_rank: Rank
    jet_rank: Rank

    @property
    def independents(self):
        return self.pf.independents

    @property
    def dependents(self):
        return self.pf.dependents

    @property
    def slot_names(self):
        return self.pf.unknowns

    @property
    def classical_unknowns(self):
        return tuple(primed(n) for n in self.pf.unknowns)

    @property
    def nonclassical_unknowns(self):
        return tuple(n for n in self.pf.unknowns[1:])

    def candidate_spec(self, name):
        for c in self.pf.candidates:
            if c.name == name:
                return c
        raise KeyError(f"no candidate named {name!r}")


def build_problem(source) -> Problem:
    """Build a Problem from problem-file text or a ProblemFile."""
    pf = source if isinstance(source, ProblemFile) else parse_problem(source)
    indep = pf.independents
    dep = pf.dependents
    z = tuple(indep) + tuple(dep)
    if set(pf.rank_base) != set(z):
        raise SolvedFormError(
            f"rank base {pf.rank_base} must order the variables {z}")
    if set(pf.rank_unknowns) != set(pf.unknowns):
        raise SolvedFormError(
            f"rank unknowns {pf.rank_unknowns} must order the slots {pf.unknowns}")
    params = {}
    for name, rel in pf.parameters:
        params[name] = _relation_from_text(name, rel) if rel else None
    fns = {}
    for w in dep:
        fns[w] = tuple(indep)
    for name, args in pf.functions:
        fns[name] = args
    for n in pf.unknowns:
        fns[n] = z
        fns[primed(n)] = z
    jet_space = VarSpace(indep, fns, dependents=dep, parameters=params)
    det_space = VarSpace(z, {k: v for k, v in fns.items() if k not in dep},
                         dependents=(), parameters=params)

    equations = []
    seen = set()
    for lhs_text, rhs_text in pf.equations:
        lhs = parse_expression(lhs_text, jet_space)
        try:
            a = lhs.single_atom()
        except TypeError:
            raise SolvedFormError(f"left side {lhs_text!r} is not a single derivative")
        if not isinstance(a, Jet) or a.base not in dep:
            raise SolvedFormError(
                f"left side {lhs_text!r} must be a derivative of a dependent")
        rhs = parse_expression(rhs_text, jet_space)
        equations.append((a.base, a.alpha, rhs))
        seen.add((a.base, a.alpha))
    for w, beta, rhs in equations:
        for at in rhs.atoms():
            if isinstance(at, Jet) and at.base in dep:
                for pw, pbeta in seen:
                    if at.base == pw and all(g >= b for g, b in zip(at.alpha, pbeta)):
                        raise SolvedFormError(
                            f"right side contains principal derivative {at!r}")
    order = 0
    for w, beta, rhs in equations:
        order = max(order, sum(beta))
        for at in rhs.atoms():
            if isinstance(at, Jet) and at.base in dep:
                order = max(order, sum(at.alpha))

    classical_rank = Rank(base=pf.rank_base,
                          unknowns=tuple(primed(n) for n in pf.rank_unknowns))
    nonclassical_rank = Rank(base=pf.rank_base,
                             unknowns=tuple(n for n in pf.rank_unknowns
                                            if n != pf.unknowns[0]))
    jet_rank = Rank(base=indep, unknowns=dep)
    return Problem(pf, jet_space, det_space, equations, order,
                   classical_rank, nonclassical_rank, jet_rank)


# ---------------------------------------------------------------------------
# generators and prolongation


@dataclass
class Generator:
    """Point-symmetry generator: one slot per independent and dependent."""

    kind: str
    xis: dict                   # independent name -> Expr (jet space)
    etas: dict                  # dependent name -> Expr (jet space)


def classical_generator(problem) -> Generator:
    sp = problem.jet_space
    names = problem.classical_unknowns
    xis = {x: sp.sym(names[i]) for i, x in enumerate(problem.independents)}
    etas = {w: sp.sym(names[len(problem.independents) + j])
            for j, w in enumerate(problem.dependents)}
    return Generator("classical", xis, etas)


def nonclassical_generator(problem, branch=1) -> Generator:
    if branch != 1:
        raise UnsupportedBranchError(
            "only the regular branch (first slot = 1) is implemented")
    sp = problem.jet_space
    names = problem.slot_names
    xis = {}
    for i, x in enumerate(problem.independents):
        xis[x] = sp.one() if i == 0 else sp.sym(names[i])
    etas = {w: sp.sym(names[len(problem.independents) + j])
            for j, w in enumerate(problem.dependents)}
    return Generator("nonclassical", xis, etas)


def prolong(gen: Generator, order: int, problem) -> dict:
    """Prolongation coefficients eta^J for every dependent and |J| <= order,
    via eta^{J,i} = D_i(eta^J) - sum_j D_i(xi_j) * u_{J+e_j}."""
    sp = problem.jet_space
    indep = problem.independents
    memo = {}

    def eta(dep, J):
        key = (dep, J)
        if key in memo:
            return memo[key]
        if not any(J):
            out = gen.etas[dep]
        else:
            i = next(idx for idx, v in enumerate(J) if v)
            Jp = list(J)
            Jp[i] -= 1
            Jp = tuple(Jp)
            out = eta(dep, Jp).total_derivative(indep[i])
            for j, xj in enumerate(indep):
                dxi = gen.xis[xj].total_derivative(indep[i])
                if dxi.is_zero():
                    continue
                Jj = list(Jp)
                Jj[j] += 1
                out = out - dxi * sp.jet(dep, tuple(Jj))
        memo[key] = out
        return out

    def indices(n, total):
        if n == 1:
            yield (total,)
            return
        for h in range(total + 1):
            for rest in indices(n - 1, total - h):
                yield (h,) + rest

    out = {}
    for dep in problem.dependents:
        for k in range(order + 1):
            for J in indices(len(indep), k):
                out[(dep, J)] = eta(dep, J)
    return out


def invariance_expression(problem, gen, eq_index, pro) -> Expr:
    """Pr X applied to F = u_beta - rhs for one equation."""
    dep, beta, rhs = problem.equations[eq_index]
    sp = problem.jet_space
    F = sp.jet(dep, beta) - rhs
    out = sp.zero()
    for x in problem.independents:
        dF = F.partial(Sym(x))
        if not dF.is_zero():
            out = out + gen.xis[x] * dF
    for w in problem.dependents:
        dF = F.partial(Sym(w))
        if not dF.is_zero():
            out = out + gen.etas[w] * dF
    for a in sorted(F.atoms(), key=lambda t: t.key):
        if isinstance(a, Jet) and a.base in problem.dependents:
            dF = F.partial(a)
            if not dF.is_zero():
                out = out + pro[(a.base, a.alpha)] * dF
    return out


# ---------------------------------------------------------------------------
# determining systems


@dataclass
class DeterminingSystem:
    kind: str
    polys: list                     # denominator-free Exprs in det_space
    rank: Rank
    provenance: list                # dict per poly
    problem: Problem = field(repr=False, default=None)

    def __iter__(self):
        return iter(self.polys)

    def __len__(self):
        return len(self.polys)


def _kz_multiplier_guard(rank):
    """Multipliers for inter-reduction must be free of unknown derivatives;
    base-field factors and order-zero unknowns are invertible, consistently
    with the monomial-content normalization (the regular-branch
    localization).  Zero sets are preserved wherever those factors do not
    vanish, which is the standing nondegeneracy assumption."""
    def ok(m: Expr):
        for a in m.atoms():
            if isinstance(a, Jet) and a.base in rank.unknowns:
                return False
        return True
    return ok


def _postprocess(problem, rank, collected, kind, autoreduce=True):
    """Clear denominators, strip monomial content, dedupe, inter-reduce with
    base-field multipliers, sort deterministically.

    Monomial content includes order-zero unknown factors (e.g. an overall
    ``xi``): the regular-branch analysis works where those factors do not
    vanish, matching how the worked systems are reported.  Stripped factors
    are recorded in the provenance.
    """
    sp = problem.det_space
    base_syms = set(problem.independents) | set(problem.dependents) \
        | set(sp.parameters) | set(problem.slot_names) \
        | set(primed(n) for n in problem.slot_names)

    def keep(a):
        return isinstance(a, Sym) and a.name in base_syms

    items = {}
    for prov, coeff in collected:
        cleared = Expr(coeff.space, coeff.num, ())
        if coeff.den:
            prov = dict(prov)
            prov["cleared_denominator"] = " * ".join(
                f"({b!r})^{e}" if e > 1 else f"({b!r})" for b, e in coeff.den)
        stripped, mono = cleared.monomial_content(keep)
        if not mono.is_rational():
            prov = dict(prov)
            prov["stripped_factor"] = repr(mono)
        _, prim = stripped.primitive()
        p = prim.rebase(sp)
        for a in p.atoms():
            if isinstance(a, Jet) and a.base in problem.dependents:
                raise AssertionError(f"parametric jet {a!r} survived collection")
        if p.is_zero():
            continue
        if not any(rank.is_unknown_atom(a, sp) for a in p.atoms()):
            raise InconsistentSystemError(
                f"determining coefficient is a nonzero base-field element {p!r}",
                witness=p)
        if p.key not in items:
            items[p.key] = (p, prov)
    polys = [p for p, _ in items.values()]
    prov_by_key = {p.key: pr for p, pr in items.values()}

    if autoreduce:
        guard = _kz_multiplier_guard(rank)
        changed = True
        while changed:
            changed = False
            polys = sorted(polys, key=lambda p: _sort_key(p, rank, sp))
            for i, p in enumerate(polys):
                if i == 0:
                    continue
                others = [DiffPoly(q, rank) for q in polys[:i]]
                r = reduce_guarded(p, others, rank, guard)
                if r == p:
                    continue
                changed = True
                prov = dict(prov_by_key.get(p.key, {}))
                prov["autoreduced"] = True
                new = list(polys)
                if r.is_zero():
                    new.pop(i)
                else:
                    stripped, _m = r.monomial_content(keep)
                    _, r = stripped.primitive()
                    if not any(rank.is_unknown_atom(a, sp) for a in r.atoms()):
                        raise InconsistentSystemError(
                            f"inter-reduction produced base-field element {r!r}",
                            witness=r)
                    new[i] = r
                    prov_by_key[r.key] = prov
                polys = new
                break
        # drop duplicates that inter-reduction may have converged onto
        uniq = {}
        for p in polys:
            uniq.setdefault(p.key, p)
        polys = list(uniq.values())

    polys = sorted(polys, key=lambda p: _sort_key(p, rank, sp))
    provenance = [prov_by_key.get(p.key, {}) for p in polys]
    return DeterminingSystem(kind, polys, rank, provenance, problem)


def _sort_key(p: Expr, rank: Rank, space):
    lead = leader_atom(p, rank)
    return (rank.key(lead, space), len(p.num), p.key)


def classical_determining(problem, autoreduce=True) -> DeterminingSystem:
    """Determining polynomials of the classical symmetry generator."""
    gen = classical_generator(problem)
    pro = prolong(gen, problem.order, problem)
    bindings = {Jet(dep, beta): rhs for dep, beta, rhs in problem.equations}
    collected = _collect_criteria(problem, gen, pro, bindings)
    return _postprocess(problem, problem.classical_rank, collected,
                        "classical", autoreduce)


def nonclassical_determining(problem, branch=1, autoreduce=True) -> DeterminingSystem:
    """Determining polynomials of the nonclassical generator (regular branch)."""
    gen = nonclassical_generator(problem, branch)
    pro = prolong(gen, problem.order, problem)
    bindings = _manifold_bindings(problem, gen)
    collected = _collect_criteria(problem, gen, pro, bindings)
    return _postprocess(problem, problem.nonclassical_rank, collected,
                        "nonclassical", autoreduce)


def invariant_surface_bindings(problem, gen) -> dict:
    """u_{x1} -> eta - sum_{i>=2} xi_i u_{x_i}, one binding per dependent."""
    sp = problem.jet_space
    indep = problem.independents
    out = {}
    for w in problem.dependents:
        rhs = gen.etas[w]
        for i, x in enumerate(indep):
            if i == 0:
                continue
            e = [0] * len(indep)
            e[i] = 1
            rhs = rhs - gen.xis[x] * sp.jet(w, e)
        e0 = [0] * len(indep)
        e0[0] = 1
        out[Jet(w, tuple(e0))] = rhs
    return out


def _manifold_bindings(problem, gen) -> dict:
    """Invariant-surface bindings plus triangularized on-manifold pivots of
    the PDE constraints (highest jet first, so pivots keep base-field
    initials whenever the equations allow it)."""
    sp = problem.jet_space
    bindings = invariant_surface_bindings(problem, gen)
    residuals = []
    for dep, beta, rhs in problem.equations:
        T = substitute(sp.jet(dep, beta) - rhs, bindings, consequences=True)
        if not T.is_zero():
            residuals.append(T)
    unknowns = set(problem.nonclassical_unknowns)
    guard = 50
    while residuals:
        guard -= 1
        if guard < 0:
            raise SolvedFormError("manifold triangularization did not terminate")
        refreshed = []
        for T in residuals:
            T2 = substitute(T, bindings, consequences=True)
            if not T2.is_zero():
                refreshed.append(T2)
        residuals = refreshed
        if not residuals:
            break
        best = max(residuals, key=lambda T: _jet_leader_key(T, problem))
        L = leader_atom(best, problem.jet_rank)
        if L is None:
            raise InconsistentSystemError(
                "PDE constraints force a nonzero jet-free relation", witness=best)
        if best.degree_in(L) != 1:
            raise SolvedFormError(
                f"cannot pivot on {L!r}: constraint is nonlinear in it")
        c = best.coefficient_of(L, 1)
        if any(isinstance(a, (Sym, Jet))
               and (a.name if isinstance(a, Sym) else a.base) in unknowns
               for a in c.atoms()):
            raise SolvedFormError(
                f"pivot coefficient of {L!r} involves the unknowns: {c!r}")
        rest = best - c * sp.atom(L)
        bindings[L] = -rest / c
        residuals = [T for T in residuals if T is not best]
    return bindings


def _jet_leader_key(T, problem):
    L = leader_atom(T, problem.jet_rank)
    if L is None:
        return ((-1,), ())
    return problem.jet_rank.key(L, problem.jet_space)


def _collect_criteria(problem, gen, pro, bindings):
    dependents = set(problem.dependents)

    def parametric(a):
        return isinstance(a, Jet) and a.base in dependents

    collected = []
    for i in range(len(problem.equations)):
        E = invariance_expression(problem, gen, i, pro)
        E = substitute(E, bindings, consequences=True)
        if E.is_zero():
            continue
        groups = collect_coefficients(E, parametric)
        for mono in sorted(groups, key=lambda m: tuple((a.key, e) for a, e in m)):
            prov = {"equation": i,
                    "monomial": "*".join(f"{a!r}^{e}" if e > 1 else f"{a!r}"
                                         for a, e in mono) or "1"}
            collected.append((prov, groups[mono]))
    return collected
