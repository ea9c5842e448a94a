"""Rank/chain/pseudo-reduction tests, including the worked reduction
examples with independently expanded certificates."""

import pytest

from symchain.diffalg import (Chain, DiffPoly, Rank, is_chain, is_reduced,
                              prem, wu_chain)
from symchain.errors import DegenerateError, InconsistentSystemError
from symchain.expr import SideRelation, VarSpace


@pytest.fixture
def ctx():
    sp = VarSpace(
        independents=("t", "x", "u"),
        functions={"xi": ("t", "x", "u"), "eta": ("t", "x", "u")},
        parameters={"sigma": None},
    )
    rank = Rank(base=("t", "x", "u"), unknowns=("xi", "eta"))
    return sp, rank


def test_leader_initial_separant(ctx):
    sp, rank = ctx
    u = sp.sym("u")
    xi_x = sp.jet_by_names("xi", "x")
    p = DiffPoly(u * xi_x ** 2 + 1, rank)
    assert p.leader == xi_x.single_atom()
    assert p.initial == u
    assert p.separant == 2 * u * xi_x


def test_leader_graded_then_unknown_precedence(ctx):
    sp, rank = ctx
    eta_uu = sp.jet_by_names("eta", "uu")
    xi_xu = sp.jet_by_names("xi", "xu")
    xi_u = sp.jet_by_names("xi", "u")
    p = DiffPoly(eta_uu - 2 * xi_xu + 2 * sp.sym("xi") * xi_u, rank)
    assert p.leader == eta_uu.single_atom()
    assert p.initial == sp.one()
    assert p.separant == sp.one()


def test_degenerate_error(ctx):
    sp, rank = ctx
    p = DiffPoly(sp.sym("u") + 1, rank)
    assert p.degenerate
    with pytest.raises(DegenerateError):
        p.leader


def test_is_reduced(ctx):
    sp, rank = ctx
    g = DiffPoly(sp.jet_by_names("eta", "uu"), rank)
    assert is_reduced(sp.jet_by_names("xi", "u"), g)
    assert not is_reduced(sp.jet_by_names("eta", "uuu"), g)
    assert not is_reduced(sp.jet_by_names("eta", "uu") ** 2, g)


def test_prem_certified_derived_example(ctx):
    sp, rank = ctx
    u = sp.sym("u")
    xi_u = sp.jet_by_names("xi", "u")
    eta = sp.sym("eta")
    eta_x = sp.jet_by_names("eta", "x")
    f = u * xi_u ** 2 + eta_x
    chain = Chain([xi_u - eta], rank)
    # independent expansion of the stated certificate identity
    assert (u * xi_u + u * eta) * (xi_u - eta) + u * eta ** 2 + eta_x == f
    cert = prem(f, chain)
    assert cert.remainder == u * eta ** 2 + eta_x
    assert cert.is_factor == sp.one()
    assert cert.verify()


def test_prem_noop_when_reduced(ctx):
    sp, rank = ctx
    chain = Chain([sp.jet_by_names("xi", "u") - sp.sym("eta")], rank)
    f = 5 * sp.jet_by_names("xi", "x") + sp.sym("u")
    cert = prem(f, chain)
    assert cert.remainder == f
    assert cert.is_factor == sp.one()
    assert cert.terms == []


def test_prem_idempotent_on_remainder(ctx):
    sp, rank = ctx
    u = sp.sym("u")
    chain = Chain([sp.jet_by_names("xi", "u") - sp.sym("eta")], rank)
    f = u * sp.jet_by_names("xi", "u") ** 2 + sp.jet_by_names("eta", "x")
    r = prem(f, chain).remainder
    assert prem(r, chain).remainder == r


def test_prem_remainder_reduced(ctx):
    sp, rank = ctx
    xi_u = sp.jet_by_names("xi", "u")
    eta_u = sp.jet_by_names("eta", "u")
    chain = Chain([xi_u - sp.sym("eta"), eta_u ** 2 - sp.sym("u")], rank)
    f = xi_u ** 3 * eta_u + sp.jet_by_names("eta", "xu") + eta_u ** 5
    cert = prem(f, chain)
    for g in chain.members:
        assert is_reduced(cert.remainder, g)
    assert cert.verify()


def test_is_chain(ctx):
    sp, rank = ctx
    eta_uu = sp.jet_by_names("eta", "uu")
    assert not is_chain([eta_uu, sp.jet_by_names("eta", "uuu")], rank)
    assert is_chain([eta_uu - 2 * sp.jet_by_names("xi", "xu")], rank)
    assert not is_chain([sp.sym("u") + 1], rank)


def test_wu_chain_one_step(ctx):
    sp, rank = ctx
    xi_u = sp.jet_by_names("xi", "u")
    eta_u = sp.jet_by_names("eta", "u")
    chain = wu_chain([xi_u, xi_u + eta_u], rank)
    assert [m.expr for m in chain.members] == [xi_u, eta_u]
    for p in (xi_u, xi_u + eta_u):
        assert prem(p, chain).remainder.is_zero()


def test_wu_chain_keeps_existing_chain(ctx):
    sp, rank = ctx
    system = [sp.jet_by_names("xi", "u"), sp.jet_by_names("eta", "uu")]
    chain = wu_chain(system, rank)
    assert [m.expr for m in chain.members] == system


def test_wu_chain_inconsistent(ctx):
    sp, rank = ctx
    with pytest.raises(InconsistentSystemError):
        wu_chain([sp.sym("u") + 1], rank)
    # a reduction that produces a nonzero base-field remainder
    xi_u = sp.jet_by_names("xi", "u")
    with pytest.raises(InconsistentSystemError):
        wu_chain([xi_u, xi_u + 1], rank)


def test_is_product_monic_linear(ctx):
    sp, rank = ctx
    chain = Chain([sp.jet_by_names("xi", "u"), sp.jet_by_names("eta", "uu")], rank)
    assert chain.is_product() == sp.one()


def test_is_product_counts_separant_beyond_linear(ctx):
    sp, rank = ctx
    xi_u = sp.jet_by_names("xi", "u")
    u = sp.sym("u")
    chain = Chain([u * xi_u ** 2 + 1], rank)
    assert chain.is_product() == u * (2 * u * xi_u)


def test_delta_saturation_forces_inconsistent_slot(ctx):
    # tau'_x = 0 and tau'_t = 2 a(x) tau' with a'' != 0 force tau' = 0;
    # only the cross-derivative sees it
    sp = VarSpace(
        independents=("t", "x", "u"),
        functions={"tau'": ("t", "x", "u")},
        parameters={},
    )
    rank = Rank(base=("t", "x", "u"), unknowns=("tau'",))
    x = sp.sym("x")
    tau = sp.sym("tau'")
    tau_x = sp.jet_by_names("tau'", "x")
    tau_t = sp.jet_by_names("tau'", "t")
    system = [tau_x, tau_t - 2 * x * x * tau]
    plain = wu_chain(system, rank, delta=False)
    assert len(plain.members) == 2
    saturated = wu_chain(system, rank, delta=True)
    leaders = [m.leader for m in saturated.members]
    from symchain.expr import Sym
    assert Sym("tau'") in leaders


def test_certificate_identity_with_separant(ctx):
    sp, rank = ctx
    u = sp.sym("u")
    xi_u = sp.jet_by_names("xi", "u")
    g = u * xi_u ** 2 + sp.sym("xi")
    f = sp.jet_by_names("xi", "xu") * sp.sym("eta") + xi_u
    cert = prem(f, Chain([g], rank))
    assert cert.verify()
    for m in Chain([g], rank).members:
        assert is_reduced(cert.remainder, m)
