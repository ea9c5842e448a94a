"""Expression-kernel unit tests: normal forms, closure rules, derivatives,
substitution, collection."""

from fractions import Fraction

import pytest

from symchain.errors import SubstitutionCycleError
from symchain.expr import (Jet, SideRelation, Sym, VarSpace,
                           collect_coefficients, substitute)


@pytest.fixture
def space():
    return VarSpace(
        independents=("t", "x"),
        functions={"u": ("t", "x"), "xi": ("t", "x", "u"),
                   "eta": ("t", "x", "u"), "f": ("u",)},
        dependents=("u",),
        parameters={"sigma": None, "r2": SideRelation("r2", 2, {0: 2}),
                    "c1": None},
    )


def test_ring_identity_zero(space):
    u = space.sym("u")
    assert ((u + 1) ** 2 - u * u - 2 * u - 1).is_zero()


def test_side_relation_rewrite(space):
    r2, u = space.sym("r2"), space.sym("u")
    assert r2 * r2 * u == 2 * u
    # powers stay below the relation degree
    e = (r2 + 1) ** 5
    for m, _ in e.num:
        for a, k in m:
            if isinstance(a, Sym) and a.name == "r2":
                assert k <= 1


def test_sech_tanh_closure(space):
    T = 2 * space.sym("t") + space.sym("x")
    s, th = space.closed("sech", T), space.closed("tanh", T)
    assert (s * s + th * th - 1).is_zero()


def test_csch_coth_closure(space):
    T = space.sym("x")
    cs, co = space.closed("csch", T), space.closed("coth", T)
    assert (co * co - cs * cs - 1).is_zero()


def test_exp_merge_and_cancel(space):
    t, x = space.sym("t"), space.sym("x")
    assert space.closed("exp", t) * space.closed("exp", x) == space.closed("exp", t + x)
    assert (space.closed("exp", t) * space.closed("exp", -t)) == space.one()
    assert space.closed("exp", t) ** 3 == space.closed("exp", 3 * t)


def test_total_derivative_product_rule(space):
    u = space.sym("u")
    ux, uxx = space.jet("u", (0, 1)), space.jet("u", (0, 2))
    assert (u * ux).total_derivative("x") == ux * ux + u * uxx


def test_tanh_derivative_closure(space):
    c1, t = space.sym("c1"), space.sym("t")
    th = space.closed("tanh", c1 * t)
    assert th.total_derivative("t") == c1 * (1 - th * th)


def test_opaque_chain_rule(space):
    ux = space.jet("u", (0, 1))
    assert space.sym("f").total_derivative("x") == space.jet("f", (1,)) * ux


def test_unknown_chain_rule(space):
    ux = space.jet("u", (0, 1))
    got = space.sym("xi").total_derivative("x")
    assert got == space.jet("xi", (0, 1, 0)) + space.jet("xi", (0, 0, 1)) * ux


def test_mixed_partials_commute(space):
    u = space.sym("u")
    ux, uxx = space.jet("u", (0, 1)), space.jet("u", (0, 2))
    e = u * ux * uxx + space.sym("t") * space.sym("x") * u
    assert e.total_derivative("x").total_derivative("t") == \
        e.total_derivative("t").total_derivative("x")


def test_substitute_consequence_is_derivative(space):
    u, sig = space.sym("u"), space.sym("sigma")
    ut, utx = space.jet("u", (1, 0)), space.jet("u", (1, 1))
    rhs = space.jet("u", (0, 2)) + u * (u - 1) * (u - sig)
    assert utx.substitute({ut: rhs}, consequences=True) == rhs.total_derivative("x")


def test_substitute_zero_dependent(space):
    ux = space.jet("u", (0, 1))
    e = ux * space.sym("xi") + space.sym("eta")
    assert e.substitute({"u": 0}, consequences=True) == \
        space.sym("eta").substitute({"u": 0}, consequences=True)


def test_double_substitution_fixpoint_oracle(space):
    # binding u_t -> eta - xi*u_x applied to u_tt; oracle expands by hand
    sp = space
    ux, uxx = sp.jet("u", (0, 1)), sp.jet("u", (0, 2))
    xi, eta = sp.sym("xi"), sp.sym("eta")
    isc = eta - xi * ux
    utt = sp.jet("u", (2, 0))
    got = utt.substitute({sp.jet("u", (1, 0)): isc}, consequences=True)
    eta_t, eta_u = sp.jet("eta", (1, 0, 0)), sp.jet("eta", (0, 0, 1))
    eta_x = sp.jet("eta", (0, 1, 0))
    xi_t, xi_u = sp.jet("xi", (1, 0, 0)), sp.jet("xi", (0, 0, 1))
    xi_x = sp.jet("xi", (0, 1, 0))
    utx_val = eta_x + eta_u * ux - (xi_x + xi_u * ux) * ux - xi * uxx
    expected = eta_t + eta_u * isc - (xi_t + xi_u * isc) * ux - xi * utx_val
    assert got == expected


def test_substitution_derivative_compatibility(space):
    # substituting then differentiating == differentiating then substituting
    sp = space
    u, ux = sp.sym("u"), sp.jet("u", (0, 1))
    binding = {sp.jet("u", (1, 0)): sp.jet("u", (0, 2)) + u * u}
    e = sp.jet("u", (1, 0)) * ux + u
    a = e.substitute(binding, consequences=True).total_derivative("x")
    b = e.total_derivative("x").substitute(binding, consequences=True)
    assert a == b


def test_substitution_cycle_detected(space):
    ut = space.jet("u", (1, 0))
    with pytest.raises(SubstitutionCycleError):
        substitute(space.sym("xi") * ut, {ut: space.jet("u", (1, 1))},
                   consequences=True)


def test_collect_coefficients(space):
    sp = space
    ux = sp.jet("u", (0, 1))
    a, b = sp.sym("sigma"), sp.sym("c1")
    e = (a - 1) * ux + b * ux ** 2

    def parametric(at):
        return isinstance(at, Jet) and at.base == "u"

    got = collect_coefficients(e, parametric)
    key1 = ((ux.single_atom(), 1),)
    key2 = ((ux.single_atom(), 2),)
    assert got[key1] == a - 1
    assert got[key2] == sp.sym("c1")
    assert collect_coefficients(sp.zero(), parametric) == {}


def test_division_and_denominators(space):
    u, x = space.sym("u"), space.sym("x")
    q = u / (x + 1)
    assert q * (x + 1) == u
    assert (1 / space.sym("r2")) == space.sym("r2") / 2
    d = (u / x).total_derivative("x")
    assert d == space.jet("u", (0, 1)) / x - u / (x * x)


def test_undeclared_symbol_raises(space):
    with pytest.raises(NameError):
        space.sym("nope")


def test_rebase_checks_declarations(space):
    other = VarSpace(independents=("t",), functions={}, parameters={})
    with pytest.raises(NameError):
        space.sym("u").rebase(other)
