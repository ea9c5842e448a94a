"""The classical <-> nonclassical connection.

Steps, for a PDE problem:

1. generate both determining systems (symgen);
2. bring the classical system into ascending chain form C' under a rank
   with the first-slot unknown highest, and split off D'' (members whose
   leaders are derivatives of that unknown);
3. substitute the equivalence map ``xi_i' = xi_1' * xi_i``, ``eta' = xi_1' *
   eta`` into the complement, pseudo-reduce modulo D'', and strip common
   first-slot factors: the bridging chain C;
4. pseudo-reduce every nonclassical determining polynomial modulo C: the
   remainders must vanish identically, and the recorded certificates are
   the connection identities.

Also: the nontriviality test (a candidate whose substituted image forces
the first-slot unknown to vanish cannot come from a classical symmetry)
and the zero-set inclusion audit over concrete candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .diffalg import (Chain, DiffPoly, Rank, leader_atom, prem,
                      unknown_atoms, wu_chain)
from .errors import (InclusionViolationError, ISVanishesError,
                     InconsistentSystemError, NonzeroRemainderError, RankError)
from .expr import Expr, Jet, Sym, substitute
from .symgen import (DeterminingSystem, Problem, classical_determining,
                     nonclassical_determining, primed)


@dataclass
class Cln1Image:
    """Image of a classical chain under the equivalence substitution."""

    source: Chain
    images: list              # Exprs in the unknowns plus the first-slot symbol
    rank: Rank                # induced rank: first-slot unknown kept highest


@dataclass
class BridgeResult:
    problem: Problem
    classical: DeterminingSystem
    nonclassical: DeterminingSystem
    cprime: Chain
    dpp: Chain                  # D'': first-slot members of C'
    rest: Chain                 # C' \ D''
    bridge_chain: Chain         # C, in the nonclassical unknowns (+ slot symbol)
    stripped: list              # per member of C: stripped slot-power
    certificates: list          # per nonclassical poly: ReductionCertificate
    is_cprime: Expr
    is_c: Expr


@dataclass
class TrivialityVerdict:
    verdict: str                # nontrivial | classical_equivalent | inconclusive
    witness: object = None
    detail: str = ""

    def __bool__(self):
        return self.verdict == "nontrivial"


def bridge_rank(problem) -> Rank:
    """Induced rank on the nonclassical unknowns plus the first-slot primed
    symbol, which stays highest."""
    slot0 = primed(problem.slot_names[0])
    others = tuple(n for n in problem.pf.rank_unknowns if n != problem.slot_names[0])
    return Rank(base=problem.classical_rank.base, unknowns=others + (slot0,))


def split_dpp(cprime: Chain, problem) -> tuple:
    """Split C' into (D'', complement): members whose leaders are derivatives
    of the first-slot unknown versus the rest.  Both inherit the chain
    property."""
    slot0 = primed(problem.slot_names[0])
    if cprime.rank.unknowns[-1] != slot0:
        raise RankError(
            f"bridge split requires {slot0!r} to be the highest-ranked unknown")
    space = cprime.members[0].expr.space
    dpp, rest = [], []
    for m in cprime.members:
        lead = m.leader
        base = lead.name if isinstance(lead, Sym) else lead.base
        (dpp if base == slot0 else rest).append(m)
    return (Chain(dpp, cprime.rank, check=False) if dpp else Chain([], cprime.rank, check=False),
            Chain(rest, cprime.rank, check=False) if rest else Chain([], cprime.rank, check=False))


def cln1_bindings(problem) -> dict:
    """xi_i' -> xi_1' * xi_i (i >= 2), eta_w' -> xi_1' * eta_w, as function
    bindings whose derivatives expand by the Leibniz rule."""
    sp = problem.det_space
    slot0p = primed(problem.slot_names[0])
    t0 = sp.sym(slot0p)
    out = {}
    for i, name in enumerate(problem.slot_names):
        if i == 0:
            continue
        out[Sym(primed(name))] = t0 * sp.sym(name)
    return out


def apply_cln1(cprime: Chain, problem) -> Cln1Image:
    """Substitute the equivalence map into every member of a chain."""
    binds = cln1_bindings(problem)
    rank = bridge_rank(problem)
    images = [substitute(m.expr, binds, consequences=True) for m in cprime.members]
    return Cln1Image(cprime, images, rank)


def _strip_slot_powers(e: Expr, slot0p, rank, space):
    """Divide out the largest power of the first-slot symbol (and its
    derivatives never remain after reduction) common to all monomials."""
    def keep(a):
        return isinstance(a, Sym) and a.name == slot0p
    stripped, mono = e.monomial_content(keep)
    power = 0
    if not mono.is_rational():
        (m, _c), = mono.num
        power = m[0][1]
    return stripped, power


def build_bridge(problem, classical=None, nonclassical=None, delta=False) -> BridgeResult:
    """Run the four construction steps and verify the connection identities.

    A nonzero certificate remainder means an upstream inconsistency and is
    a hard error, as is a vanishing initial/separant product of C'.
    """
    dsys_c = classical or classical_determining(problem)
    dsys_n = nonclassical or nonclassical_determining(problem)
    sp = problem.det_space
    slot0p = primed(problem.slot_names[0])

    crank = problem.classical_rank
    if crank.unknowns[-1] != slot0p:
        raise RankError(
            f"bridge construction requires {slot0p!r} highest in the classical rank")
    rank = bridge_rank(problem)
    cprime = wu_chain(dsys_c.polys, crank, delta=delta)
    is_cprime = cprime.is_product()
    if is_cprime.is_zero():
        raise ISVanishesError("IS(C') normalizes to zero")

    dpp, rest = split_dpp(cprime, problem)

    binds = cln1_bindings(problem)
    dpp_img = [substitute(m.expr, binds, consequences=True) for m in dpp.members]
    dpp_img_chain = _image_chain(dpp_img, rank, sp)
    members = []
    stripped_powers = []
    for m in rest.members:
        img = substitute(m.expr, binds, consequences=True)
        if dpp_img_chain is not None:
            img = prem(img, dpp_img_chain).remainder
        stripped, power = _strip_slot_powers(img, slot0p, rank, sp)
        _, stripped = stripped.primitive()
        members.append(stripped)
        stripped_powers.append(power)
    bridge_members = sorted(members, key=lambda e: rank.key(leader_atom(e, rank), sp))
    bridge_chain = Chain(bridge_members, rank)
    is_c = bridge_chain.is_product()
    if is_c.is_zero():
        raise ISVanishesError("IS(C) normalizes to zero")

    certificates = []
    for p in dsys_n.polys:
        cert = prem(p.rebase(sp), bridge_chain)
        if not cert.remainder.is_zero():
            raise NonzeroRemainderError(
                f"connection identity failed for {p!r}: remainder {cert.remainder!r}",
                certificate=cert)
        certificates.append(cert)

    return BridgeResult(problem, dsys_c, dsys_n, cprime, dpp, rest,
                        bridge_chain, stripped_powers, certificates,
                        is_cprime, is_c)


def _image_chain(images, rank, space):
    """Interreduce the D'' images into a chain for the Step-3 reduction."""
    nonzero = [e for e in images if not e.is_zero()]
    if not nonzero:
        return None
    return wu_chain(nonzero, rank)


# ---------------------------------------------------------------------------
# nontriviality test


_ANSATZ_CATALOG = ("one",)


def triviality_test(problem, bindings, bridge: BridgeResult, subset=None) -> TrivialityVerdict:
    """Decide whether a nonclassical candidate can be the image of a
    classical symmetry.

    ``bindings`` maps the nonclassical unknown names to concrete Exprs.  The
    equivalence substitution with those values turns the chosen subset of C'
    (default D'' first, then all of C') into a system in the first-slot
    symbol alone; if its chain closure forces that symbol to vanish, no
    classical preimage exists (sound).  If the full C'-image admits an
    explicit nonzero catalog solution the candidate is classically
    equivalent.  Anything else is inconclusive.
    """
    sp = problem.det_space
    slot0p = primed(problem.slot_names[0])
    cand = _candidate_bindings(problem, bindings)

    subsets = [subset] if subset is not None else [bridge.dpp.members, bridge.cprime.members]
    rank = Rank(base=problem.classical_rank.base, unknowns=(slot0p,))
    for k, members in enumerate(subsets):
        if not members:
            continue
        images = []
        for m in members:
            img = substitute(m.expr, {**cln1_bindings(problem), **cand},
                             consequences=True)
            img = substitute(img, cand, consequences=True)
            if not img.den:
                pass
            else:
                img = Expr(img.space, img.num, ())
            if not img.is_zero():
                images.append(img)
        if not images:
            continue
        try:
            chain = wu_chain(images, rank, delta=True)
        except InconsistentSystemError as err:
            return TrivialityVerdict("nontrivial", witness=err.witness,
                                     detail="substituted system is inconsistent")
        forcing = _forcing_member(chain, slot0p, sp)
        if forcing is not None:
            return TrivialityVerdict(
                "nontrivial", witness=forcing,
                detail=f"the image system forces {slot0p} = 0")
        is_full = subset is not None or k == len(subsets) - 1
        if is_full and _solves_with_constant_slot(images, slot0p, sp):
            return TrivialityVerdict(
                "classical_equivalent", witness=sp.one(),
                detail=f"{slot0p} = 1 solves the substituted C'")
    return TrivialityVerdict("inconclusive")


def _candidate_bindings(problem, bindings):
    sp = problem.det_space
    out = {}
    for name, val in bindings.items():
        out[Sym(name)] = val.rebase(sp) if isinstance(val, Expr) else sp.num(val)
    return out


def _forcing_member(chain, slot0p, space):
    """A chain member of the form c * slot0 with unknown-free nonzero c."""
    for m in chain.members:
        lead = m.leader
        if isinstance(lead, Sym) and lead.name == slot0p and m.leader_degree == 1:
            tail = m.expr - m.initial * space.sym(slot0p)
            if tail.is_zero() and not m.initial.is_zero():
                return m.expr
    return None


def _solves_with_constant_slot(images, slot0p, space):
    sub = {Sym(slot0p): space.one()}
    return all(substitute(e, sub, consequences=True).is_zero() for e in images)


# ---------------------------------------------------------------------------
# inclusion audit


@dataclass
class InclusionReport:
    name: str
    kind: str                       # classical | nonclassical
    in_cprime_image: object         # True / False / None (not applicable)
    in_c: object
    in_d: object
    residuals: dict = field(default_factory=dict)


def inclusion_audit(bridge: BridgeResult, candidates) -> list:
    """Check Z(C'-image) <= Z(C) <= Z(D) membership direction on concrete
    candidates; a violation raises InclusionViolationError.

    ``candidates`` is a list of (name, kind, bindings) with bindings over
    the classical unknown names (kind 'classical') or the nonclassical ones.
    """
    problem = bridge.problem
    sp = problem.det_space
    reports = []
    for name, kind, bindings in candidates:
        rep = InclusionReport(name, kind, None, None, None)
        if kind == "classical":
            lam = _map_classical(problem, bindings)
            rep.in_cprime_image = _vanishes(problem, bridge.cprime.exprs(), bindings)
        else:
            lam = dict(bindings)
            rep.in_cprime_image = None
        if lam is not None:
            rep.in_c = _vanishes(problem, bridge.bridge_chain.exprs(), lam,
                                 record=rep.residuals, tag="C")
            rep.in_d = _vanishes(problem, [p for p in bridge.nonclassical.polys],
                                 lam, record=rep.residuals, tag="D")
        if rep.in_cprime_image is True and rep.in_c is False:
            raise InclusionViolationError(
                f"{name}: classical member not in Z(C)")
        if rep.in_c is True and rep.in_d is False:
            raise InclusionViolationError(
                f"{name}: member of Z(C) escapes Z(D)")
        reports.append(rep)
    return reports


def _map_classical(problem, bindings):
    """Classical slots -> nonclassical coordinates via the equivalence map,
    None when the first slot vanishes (map undefined)."""
    sp = problem.det_space
    slot0p = primed(problem.slot_names[0])
    tau = bindings.get(slot0p)
    if tau is None or (isinstance(tau, Expr) and tau.is_zero()) or tau == 0:
        return None
    out = {}
    for i, base in enumerate(problem.slot_names):
        if i == 0:
            continue
        v = bindings[primed(base)]
        v = v if isinstance(v, Expr) else sp.num(v)
        tau_e = tau if isinstance(tau, Expr) else sp.num(tau)
        out[base] = v / tau_e
    return out


def _vanishes(problem, polys, bindings, record=None, tag=""):
    sp = problem.det_space
    sub = _candidate_bindings(problem, bindings)
    ok = True
    for i, p in enumerate(polys):
        r = substitute(p.rebase(sp), sub, consequences=True)
        if not r.is_zero():
            ok = False
            if record is not None:
                record[f"{tag}[{i}]"] = r
    return ok
