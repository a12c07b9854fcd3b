import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsgibbs import poly
from nlsgibbs.fourier_state import ModelParams, random_state
from nlsgibbs.gibbs import SamplerConfig
from nlsgibbs.normal_form import build_h2j
from nlsgibbs.poly import (Admissibility, ModTerm, ModulatedPolynomial, SparsePolynomial,
                           bracket_value, evaluate, gradient, kernel_range_split, lh2_apply,
                           lh2_eigenvalue, lh2_invert, poisson_bracket, sup_norm)

import oracles

N = 3


def random_poly(rng, N, n, n_terms=6, real=False):
    keys = list(poly.enumerate_monomials(N, n))
    pick = rng.choice(len(keys), size=min(n_terms, len(keys)), replace=False)
    terms = {keys[i]: complex(rng.normal(), rng.normal()) for i in pick}
    f = SparsePolynomial(N, n, terms)
    return f + f.conj() if real else f


@st.composite
def polys(draw, n=None):
    seed = draw(st.integers(0, 2**31))
    n = draw(st.integers(1, 3)) if n is None else n
    return random_poly(np.random.default_rng(seed), N, n, n_terms=draw(st.integers(1, 8)))


def test_key_validation():
    with pytest.raises(ValueError, match="zero momentum"):
        SparsePolynomial(2, 1, {((1,), (2,)): 1.0})
    with pytest.raises(ValueError, match="degree"):
        SparsePolynomial(2, 2, {((1,), (1,)): 1.0})
    with pytest.raises(ValueError, match="truncation"):
        SparsePolynomial(2, 1, {((3,), (3,)): 1.0})


def test_canonical_keys_fold():
    f = SparsePolynomial(3, 2, {((2, 1), (3, 0)): 1.0, ((1, 2), (0, 3)): 2.0})
    assert len(f) == 1
    assert f.coeff((1, 2), (0, 3)) == 3.0


def test_bracket_of_action_with_itself():
    I = SparsePolynomial.action(N, 1)
    assert len(poisson_bracket(I, I)) == 0


def test_bracket_h2_with_action():
    for k in range(-N, N + 1):
        assert len(poisson_bracket(SparsePolynomial.h2(N), SparsePolynomial.action(N, k))) == 0


def test_single_term_chain_rule():
    # zero-momentum analogue of {c psi_1 psibar_2, |psi_1|^2} = -i c psi_1 psibar_2
    c = 0.7 - 0.2j
    f = SparsePolynomial(N, 2, {((1, 2), (0, 3)): c})
    out = poisson_bracket(f, SparsePolynomial.action(N, 1))
    assert dict(out.terms) == {((1, 2), (0, 3)): pytest.approx(-1j * c)}


def test_lh2_multiplier_example():
    key = ((1, 2), (0, 3))
    # {H2, m} = (i/2)(sum_holo k^2 - sum_anti k^2) m with H2 = 1/2 sum k^2 |psi_k|^2
    assert lh2_eigenvalue(key) == pytest.approx(-2j)
    m = SparsePolynomial(N, 2, {key: 1.0})
    assert lh2_apply(m).coeff(*key) == pytest.approx(-2j)
    # the same multiplier as the bracket with H2
    assert poisson_bracket(SparsePolynomial.h2(N), m).coeff(*key) == pytest.approx(-2j)


def test_lh2_kills_kernel_and_inverts():
    assert len(lh2_apply(SparsePolynomial(7, 3, {((1, 5, 6), (2, 3, 7)): 1.0}))) == 0
    key = ((1, 2), (0, 3))
    f = SparsePolynomial(N, 2, {key: lh2_eigenvalue(key)})
    assert lh2_invert(f).coeff(*key) == pytest.approx(1.0)
    assert len(lh2_invert(SparsePolynomial(N, 2))) == 0
    with pytest.raises(ValueError, match="kernel"):
        lh2_invert(SparsePolynomial.action(N, 1))


def test_lh2_linearity(rng):
    f, g = random_poly(rng, N, 2), random_poly(rng, N, 2)
    assert sup_norm(lh2_apply(f + g) - lh2_apply(f) - lh2_apply(g)) < 1e-13


def test_kernel_range_membership():
    assert poly.is_resonant(((1, 5, 6), (2, 3, 7)))
    assert not poly.is_trivial(((1, 5, 6), (2, 3, 7)))
    assert not poly.is_resonant(((0, 3), (1, 2)))
    f = SparsePolynomial(7, 2, {((0, 3), (1, 2)): 1.0, ((1, 2), (1, 2)): 1.0})
    kern, rng_ = kernel_range_split(f)
    assert list(kern) == [((1, 2), (1, 2))]
    assert list(rng_) == [((0, 3), (1, 2))]


def test_h4_range_invert_apply_round_trip():
    h4 = build_h2j(4, ModelParams((1.0,), 1.0, 4), 2)
    _, r = kernel_range_split(h4)
    assert sup_norm(lh2_apply(lh2_invert(r)) - r) < 1e-13


@settings(max_examples=40, deadline=None)
@given(f=polys(), g=polys())
def test_bracket_antisymmetry_and_degree(f, g):
    fg = poisson_bracket(f, g)
    gf = poisson_bracket(g, f)
    assert sup_norm(fg + gf) <= 1e-12 * max(1.0, sup_norm(fg))
    assert fg.n == f.n + g.n - 1
    assert all(sum(h) == sum(a) for h, a in fg)


@settings(max_examples=25, deadline=None)
@given(f=polys(), g=polys(), s=st.floats(-3, 3))
def test_bracket_bilinear(f, g, s):
    h = random_poly(np.random.default_rng(1), N, g.n)
    lhs = poisson_bracket(f, s * g + h)
    rhs = s * poisson_bracket(f, g) + poisson_bracket(f, h)
    assert sup_norm(lhs - rhs) <= 1e-12 * max(1.0, sup_norm(lhs))


@settings(max_examples=15, deadline=None)
@given(f=polys(n=2), g=polys(n=2), seed=st.integers(0, 1000))
def test_symbolic_bracket_matches_numeric(f, g, seed):
    psi = random_state(N, np.random.default_rng(seed))
    sym = evaluate(poisson_bracket(f, g), psi)
    num = bracket_value(f, g, psi)
    assert abs(sym - num) <= 1e-11 * max(1.0, abs(num))


def test_jacobi_identity(rng):
    f, g, h = (random_poly(rng, N, n) for n in (2, 1, 2))
    jac = (poisson_bracket(f, poisson_bracket(g, h)) + poisson_bracket(g, poisson_bracket(h, f))
           + poisson_bracket(h, poisson_bracket(f, g)))
    assert sup_norm(jac) < 1e-12


def test_evaluate_action_and_h4_single_mode():
    psi = np.zeros(2 * N + 1, complex)
    psi[N + 2] = 2.0
    assert evaluate(SparsePolynomial.action(N, 2), psi) == pytest.approx(4.0)
    h4 = build_h2j(1, ModelParams((1.0,), 1.0, 1), 2)
    a = 0.6 + 0.3j
    assert evaluate(h4, np.array([0, a, 0])).real == pytest.approx(abs(a) ** 4 / 4 / (2 * math.pi))


def test_power_sum_matches_bruteforce(rng):
    psi = random_state(2, rng)
    f = poly.power_sum_polynomial(2, 3)
    assert evaluate(f, psi) == pytest.approx(oracles.power_integral_bruteforce(psi, 3), rel=1e-12)


def test_evaluate_accepts_larger_state(rng):
    f = random_poly(rng, 2, 2)
    psi = random_state(2, rng)
    big = np.concatenate([[0, 0], psi, [0, 0]])
    assert evaluate(f, big) == pytest.approx(evaluate(f, psi))
    with pytest.raises(ValueError):
        evaluate(random_poly(rng, 4, 2), psi)


def test_gradient_of_action():
    psi = random_state(N, np.random.default_rng(0))
    d1, d2 = gradient(SparsePolynomial.action(N, 1), psi)
    assert d2[N + 1] == pytest.approx(psi[N + 1])
    assert d1[N + 1] == pytest.approx(np.conj(psi[N + 1]))


def _fd_check(f, psi, v, h=1e-5):
    d1, d2 = gradient(f, psi)
    exact = np.sum(d1 * v + d2 * np.conj(v))
    fd = oracles.finite_difference(lambda x: evaluate(f, x), psi, v, h)
    return abs(exact - fd)


def test_gradient_finite_difference(rng):
    f = random_poly(rng, N, 3, n_terms=10)
    psi, v = random_state(N, rng), random_state(N, rng)
    assert _fd_check(f, psi, v) < 1e-6


def _modulated(delta, tag="rho_over_a", order=0):
    key = ((1, 2), (0, 3))
    return ModulatedPolynomial(N, [ModTerm(key, 0.8 - 0.1j, tag, order, (1, 2), (0, 3))], delta)


def test_modulated_gradient_finite_difference(rng):
    psi, v = random_state(N, rng), random_state(N, rng)
    I = np.abs(psi) ** 2
    av = I[N + 1] + I[N + 2] - I[N] - I[N + 3]
    for tag, order in (("rho_over_a", 0), ("rho_over_a", 1), ("rho", 0), ("rho", 1),
                       ("one_minus_rho", 1)):
        f = _modulated(abs(av) / 1.5, tag, order)  # a/delta = 1.5 sits on the ramp
        assert _fd_check(f, psi, v, h=1e-6) < 1e-6 * max(1, abs(evaluate(f, psi)))


def test_modulated_gradient_far_from_edge(rng):
    psi = random_state(N, rng)
    I = np.abs(psi) ** 2
    a = I[N + 1] + I[N + 2] - I[N] - I[N + 3]
    c = 0.8 - 0.1j
    f = _modulated(abs(a) / 3)
    m = psi[N + 1] * psi[N + 2] * np.conj(psi[N] * psi[N + 3])
    _, d2 = gradient(f, psi)
    # d/dpsibar_0 of c m / a: c (dm/dpsibar_0)/a - c m (-psi_0)/a^2
    dm = psi[N + 1] * psi[N + 2] * np.conj(psi[N + 3])
    hand = c * dm / a + c * m * psi[N] / a**2
    assert d2[N] == pytest.approx(hand, rel=1e-12)


def test_rho_support_and_smoothness():
    x = np.linspace(-3, 3, 601)
    r = poly.rho(x)
    assert np.all(r[np.abs(x) <= 1] == 0)
    assert np.all(r[np.abs(x) >= 2] == 1)
    for order in (1, 2):
        fd = np.gradient(poly.rho(x, order - 1), x)
        assert np.max(np.abs(fd - poly.rho(x, order))[5:-5]) < 0.05 * np.max(np.abs(poly.rho(x, order)))


def test_modulated_bracket_two_routes(rng):
    f = random_poly(rng, N, 2)
    psi = random_state(N, rng)
    I = np.abs(psi) ** 2
    a = I[N + 1] + I[N + 2] - I[N] - I[N + 3]
    g = _modulated(abs(a) / 1.4)
    sym = evaluate(poisson_bracket(f, g), psi)
    assert sym == pytest.approx(bracket_value(f, g, psi), rel=1e-10)
    assert evaluate(poisson_bracket(g, f), psi) == pytest.approx(-sym, rel=1e-10)
    with pytest.raises(TypeError):
        poisson_bracket(g, g)


def test_sup_norm_properties(rng):
    assert sup_norm(SparsePolynomial(N, 2)) == 0.0
    f = random_poly(rng, N, 2)
    assert sup_norm(2 * f) == pytest.approx(2 * sup_norm(f))


def test_lattice_sum_and_constant():
    l = np.arange(1, 10**6 + 1, dtype=float)
    direct = 1 + 2 * np.sum(1 / (1 + l * l))
    assert poly.lattice_sum() == pytest.approx(3.153348, abs=1e-6)
    assert poly.lattice_sum() == pytest.approx(direct, abs=3e-6)
    assert poly.gaussian_constant(1) == pytest.approx(8 * 2**1.5 * poly.lattice_sum())


def test_gaussian_norm_of_single_action():
    p = ModelParams((1.0,), 16.0, 4)
    cfg = SamplerConfig(p, n_samples=40_000, method="gaussian-only")
    rep = poly.gaussian_norm_check(SparsePolynomial.action(4, 0).with_adm(None), p, cfg)
    assert rep.estimate == pytest.approx(math.sqrt(8) / 16, rel=0.05)
    assert rep.passed
    assert rep.bound == pytest.approx(poly.gaussian_constant(1) / 16)


def test_admissibility_doubles_through_brackets():
    I = SparsePolynomial.action(N, 1)
    assert I.adm == Admissibility(1, 1)
    f = random_poly(np.random.default_rng(2), N, 2)
    once = poisson_bracket(f, I)
    twice = poisson_bracket(f, once)
    assert once.adm == Admissibility(2, 1)
    assert twice.adm == Admissibility(4, 1)
    assert poisson_bracket(I, SparsePolynomial.action(N, 2)).adm is None


def test_serialization_round_trip(tmp_path, rng):
    f = random_poly(rng, N, 2)
    path = tmp_path / "f.jsonl"
    poly.save_polynomial(path, f)
    g = poly.load_polynomial(path, N)
    assert sup_norm(f - g) == 0.0
    m = _modulated(0.3, "rho_over_a", 1)
    poly.save_polynomial(path, m)
    back = poly.load_polynomial(path, N)
    assert back.terms == m.terms and back.delta == m.delta


def test_restrict_drops_high_modes(rng):
    f = random_poly(rng, 4, 2, n_terms=30)
    r = f.restrict(2)
    assert r.N == 2
    assert all(abs(k) <= 2 for key in r for k in key[0] + key[1])
