"""Sixth-order approximate invariants built from a Birkhoff-type normal form.

Starting from ``H = H2 + H4 + H6 + ...`` and the action ``I_tk = |psi_tk|^2``
the construction is

* ``Z4 = H4^N`` and ``chi4 = -L^{-1} H4^R`` with ``L = {H2, .}``,
* ``G = H6 + 1/2 {H4^R, chi4} + {Z4, chi4}``, ``Z6 = G^N``, ``chi6 = -L^{-1} G^R``,
* ``Phi_4 = {chi4, I}`` and ``Phi_6 = 1/2 {chi4, {chi4, I}} + {chi6, I}``,
* ``R6 = {I, Z6} = sum_k W_k`` (one term per resonant monomial involving ``tk``),
* ``tilde Phi = sum_k W_k rho(a_k/delta) / (i Omega_k)`` solving
  ``{Z4, tilde Phi} = sum_k W_k rho(a_k/delta)``, where ``Omega_k`` is the
  frequency of the monomial under the flow of ``Z4``,
* ``Phi^(6) = I + Phi_4 + Phi_6 + tilde Phi + {chi4, tilde Phi}``.

With these choices every term of order four and six cancels in
``{H, Phi^(6)}`` except ``-sum_k W_k (1 - rho(a_k/delta))``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .fourier_state import ModelParams, gradient_H, modes, truncation_of
from .poly import (Admissibility, ModTerm, ModulatedPolynomial, SparsePolynomial,
                   bracket_split, bracket_value, evaluate, gradient, gradient_with_tangent,
                   is_trivial, kernel_range_split, lh2_apply, lh2_invert, monomial_jets,
                   poisson_bracket, polynomial_from_lines, polynomial_to_lines,
                   power_sum_polynomial, product, rho, sup_norm, tag_function)


@dataclass(frozen=True)
class CutoffSpec:
    """Cutoff width ``delta`` for ``rho(a/delta)``.

    ``force_one`` replaces the cutoff by 1 everywhere, so the resonant
    remainder vanishes and the invariant carries bare ``1/a`` denominators.
    Only meant for identity checks on states away from ``a = 0``.
    """

    delta: float
    beta: float | None = None
    force_one: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("cutoff width delta must be positive")
        if self.beta is not None and not 0 < self.delta * self.beta < 1:
            raise ValueError(
                f"cutoff requires 0 < delta*beta < 1, got delta*beta = {self.delta * self.beta:.3g}"
            )

    @classmethod
    def auto(cls, beta: float) -> "CutoffSpec":
        return cls(beta ** (-13 / 10), beta)

    def rho(self, a):
        if self.force_one:
            return np.ones_like(np.asarray(a, dtype=float))
        return rho(np.asarray(a, dtype=float) / self.delta)


def build_h2j(N: int, params: ModelParams, j: int) -> SparsePolynomial:
    """``H_2j = c_j/(2j) int |psi|^(2j)`` in Fourier form."""
    if j < 2:
        raise ValueError(f"j={j} out of range: H_2j exists for j >= 2")
    if j > params.q:
        return SparsePolynomial(N, j)
    return power_sum_polynomial(N, j, params.cj(j) / (2 * j))


def total_action(N: int) -> SparsePolynomial:
    return sum((SparsePolynomial.action(N, k).with_adm(None) for k in range(-N, N + 1)),
               SparsePolynomial(N, 1))


def z4_closed_form(N: int, c2: float) -> SparsePolynomial:
    """``(c2/2pi) [ (sum I)^2 / 2 - (sum I^2) / 4 ]``."""
    S = total_action(N)
    Q = sum((product(SparsePolynomial.action(N, k), SparsePolynomial.action(N, k)).with_adm(None)
             for k in range(-N, N + 1)), SparsePolynomial(N, 2))
    return (c2 / (2 * math.pi)) * (0.5 * product(S, S) - 0.25 * Q)


def a_k(state, sextuple) -> np.ndarray:
    """``sum_{holo} |psi|^2 - sum_{anti} |psi|^2`` for ``sextuple = (holo, anti)``."""
    psi = state.coeffs if hasattr(state, "coeffs") else np.asarray(state)
    N = truncation_of(psi)
    holo, anti = sextuple
    I = np.abs(psi) ** 2
    return sum(I[..., k + N] for k in holo) - sum(I[..., k + N] for k in anti)


def omega(state, j: int, c2: float) -> np.ndarray:
    """``c2 (|psi_j|^2 + sum_k |psi_k|^2)``."""
    psi = state.coeffs if hasattr(state, "coeffs") else np.asarray(state)
    N = truncation_of(psi)
    I = np.abs(psi) ** 2
    return c2 * (I[..., j + N] + I.sum(axis=-1))


def z4_frequency_factor(c2: float) -> float:
    """``Omega_k = factor * a_k``: the Z4-flow frequency of a resonant monomial."""
    return -c2 / (4 * math.pi)


@dataclass
class NormalFormPackage:
    """Every object of the construction for one ``(N, tk, cutoff)``."""

    N: int
    tk: int
    cutoff: CutoffSpec
    params: ModelParams
    h2: SparsePolynomial | None = None
    h4: SparsePolynomial | None = None
    h6: SparsePolynomial | None = None
    z4: SparsePolynomial | None = None
    h4_range: SparsePolynomial | None = None
    chi4: SparsePolynomial | None = None
    g6: SparsePolynomial | None = None
    z6: SparsePolynomial | None = None
    chi6: SparsePolynomial | None = None
    phi_k2: SparsePolynomial | None = None
    phi_k4: SparsePolynomial | None = None
    phi_k6: SparsePolynomial | None = None
    r6: SparsePolynomial | None = None
    r6_nr: ModulatedPolynomial | None = None
    r6_r: ModulatedPolynomial | None = None
    tilde_phi6: ModulatedPolynomial | None = None
    correction: ModulatedPolynomial | None = None

    def __post_init__(self):
        if abs(self.tk) > self.N:
            raise ValueError(f"target mode {self.tk} outside truncation |k| <= {self.N}")

    @property
    def constituents(self) -> list:
        return [self.phi_k2, self.phi_k4, self.phi_k6, self.tilde_phi6, self.correction]

    @property
    def phi6_total(self) -> "Phi6":
        """All five constituents in symbolic form (slow at N = 8)."""
        return Phi6(self.constituents)

    @property
    def phi6_fast(self) -> "Phi6":
        """Same function with the correction evaluated through the Leibniz rule."""
        if getattr(self, "_fast", None) is None:
            self._fast = BracketCorrection(self.chi4, self.tilde_phi6)
        return Phi6(self.constituents[:4], self._fast)

    @property
    def resonance_count(self) -> int:
        return len(self.r6) if self.r6 is not None else 0

    def summary(self) -> dict:
        names = ["h4", "h6", "z4", "chi4", "z6", "chi6", "phi_k4", "phi_k6", "tilde_phi6", "correction"]
        return {"N": self.N, "tk": self.tk, "delta": self.cutoff.delta,
                "force_one": self.cutoff.force_one,
                "terms": {n: len(getattr(self, n)) for n in names if getattr(self, n) is not None},
                "resonances": self.resonance_count}


class BracketCorrection:
    """Numerical ``{chi, g}`` for plain ``chi`` and modulated ``g``.

    By the Leibniz rule ``{chi, h(a) m} = h(a) {chi, m} + h'(a) m {chi, a}``, so
    the value only needs the gradient of ``chi`` and of each monomial of
    ``g``; the symbolic expansion (tens of thousands of monomials) is never
    touched.  Directional derivatives use forward-mode tangents.
    """

    def __init__(self, chi: SparsePolynomial, g: ModulatedPolynomial):
        self.chi = chi
        self.g = g
        self.N = g.N
        W = 2 * self.N + 1
        terms = g.terms
        T = len(terms)
        n = len(terms[0].key[0]) if T else 0
        self.holo = np.array([t.key[0] for t in terms], dtype=np.intp).reshape(T, n) + self.N
        self.anti = np.array([t.key[1] for t in terms], dtype=np.intp).reshape(T, n) + self.N
        self.coeff = np.array([t.coeff for t in terms], dtype=complex)
        self.tags = [(t.tag, t.order) for t in terms]
        if len(set(self.tags)) > 1:
            raise ValueError("BracketCorrection expects a single coefficient tag")
        self.sig = np.zeros((T, W))
        for i, t in enumerate(terms):
            for k, c in t.signature().items():
                self.sig[i, k + self.N] = c

    def __len__(self):
        return len(self.coeff)

    def _restrict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=complex))
        Ns = truncation_of(x)
        if Ns < self.N:
            raise ValueError(f"state truncation {Ns} smaller than {self.N}")
        return x[:, Ns - self.N : Ns + self.N + 1], Ns

    def evaluate(self, states, v=None):
        """Value, or ``(value, derivative along v)`` when ``v`` is given."""
        psi, _ = self._restrict(states)
        S = psi.shape[0]
        if not len(self):
            z = np.zeros(S, dtype=complex)
            return z if v is None else (z, z.copy())
        tag, order = self.tags[0]
        delta = self.g.delta
        psib = psi.conj()
        I = np.abs(psi) ** 2
        a = I @ self.sig.T
        h0 = tag_function(tag, a, delta, order)
        h1 = tag_function(tag, a, delta, order + 1)
        if v is None:
            g1, g2 = gradient(self.chi, psi)
            jet = monomial_jets(self.holo, self.anti, psi)
        else:
            v, _ = self._restrict(v)
            g1, g2, t1, t2 = gradient_with_tangent(self.chi, psi, v)
            jet = monomial_jets(self.holo, self.anti, psi, v)
        m, d1, d2 = jet["m"], jet["d1"], jet["d2"]
        B = -1j * (np.einsum("sk,stk->st", g1, d2) - np.einsum("stk,sk->st", d1, g2))
        K = -1j * (g1 * psi - psib * g2)
        C = K @ self.sig.T
        val = (h0 * B + h1 * m * C) @ self.coeff
        if v is None:
            return val
        vb = v.conj()
        h2 = tag_function(tag, a, delta, order + 2)
        Da = (2.0 * np.real(psib * v)) @ self.sig.T
        DB = -1j * (np.einsum("sk,stk->st", t1, d2) + np.einsum("sk,stk->st", g1, jet["t2"])
                    - np.einsum("stk,sk->st", jet["t1"], g2) - np.einsum("stk,sk->st", d1, t2))
        DK = -1j * (t1 * psi + g1 * v - vb * g2 - psib * t2)
        DC = DK @ self.sig.T
        dval = (h1 * Da * B + h0 * DB + h2 * Da * m * C + h1 * jet["dm"] * C
                + h1 * m * DC) @ self.coeff
        return val, dval


class Phi6:
    """``Phi^(6)`` as the sum of its constituents (mixed degrees).

    ``fast`` replaces the symbolic correction by a :class:`BracketCorrection`
    built from ``chi4`` and ``tilde Phi``; both routes agree to round-off.
    """

    def __init__(self, parts, fast: "BracketCorrection | None" = None):
        self.parts = [p for p in parts if p is not None]
        self.fast = fast

    def evaluate(self, states, check_real: bool = True):
        vals = [evaluate(p, states) for p in self.parts]
        if self.fast is not None:
            vals.append(self.fast.evaluate(states))
        total = sum(vals)
        if check_real:
            scale = 1.0 + sum(np.abs(v) for v in vals)
            resid = np.max(np.abs(np.imag(total)) / scale)
            assert resid < 1e-12, f"imaginary residue {resid:.2e} in Phi^(6)"
        return np.real(total)

    def gradient(self, states):
        if self.fast is not None:
            raise NotImplementedError("use directional() with the fast correction")
        d1 = d2 = 0
        for p in self.parts:
            a, b = gradient(p, states)
            d1 = d1 + a
            d2 = d2 + b
        return d1, d2

    def directional(self, states, v):
        """Derivative of ``Phi^(6)`` along the complex direction ``v``."""
        states = np.atleast_2d(np.asarray(states, dtype=complex))
        v = np.atleast_2d(np.asarray(v, dtype=complex))
        out = np.zeros(states.shape[0], dtype=complex)
        for p in self.parts:
            d1, d2 = gradient(p, states)
            out += np.sum(d1 * v + d2 * v.conj(), axis=-1)
        if self.fast is not None:
            out += self.fast.evaluate(states, v)[1]
        return np.real(out)


def build_z4_chi4(pkg: NormalFormPackage) -> None:
    pkg.z4, pkg.h4_range = kernel_range_split(pkg.h4)
    pkg.chi4 = -lh2_invert(pkg.h4_range)


def build_z6_chi6(pkg: NormalFormPackage) -> None:
    pkg.g6 = (pkg.h6 + 0.5 * poisson_bracket(pkg.h4_range, pkg.chi4)
              + poisson_bracket(pkg.z4, pkg.chi4))
    pkg.z6, g_range = kernel_range_split(pkg.g6)
    pkg.chi6 = -lh2_invert(g_range)


def build_phi_corrections(pkg: NormalFormPackage) -> None:
    I = SparsePolynomial.action(pkg.N, pkg.tk)
    pkg.phi_k2 = I
    pkg.phi_k4 = poisson_bracket(pkg.chi4, I)
    pkg.phi_k6 = 0.5 * poisson_bracket(pkg.chi4, pkg.phi_k4) + poisson_bracket(pkg.chi6, I)


def build_tilde_phi6(pkg: NormalFormPackage, beta: float | None = None) -> None:
    """``R6``, its cutoff split, ``tilde Phi`` and ``{chi4, tilde Phi}``."""
    cut = pkg.cutoff
    if beta is not None and not 0 < cut.delta * beta < 1 and not cut.force_one:
        raise ValueError(f"cutoff requires 0 < delta*beta < 1, got {cut.delta * beta:.3g}")
    c2 = pkg.params.cj(2)
    tk = pkg.tk
    r6 = {}
    for key, z in pkg.z6.terms.items():
        if is_trivial(key):
            continue
        weight = key[0].count(tk) - key[1].count(tk)
        if weight:
            r6[key] = 1j * weight * z
    pkg.r6 = SparsePolynomial(pkg.N, 3, r6, Admissibility(1, tk), _trusted=True)
    inv_omega = 1.0 / (1j * z4_frequency_factor(c2))
    adm = Admissibility(1, tk)
    tilde, nr, res = [], [], []
    tag = "inv" if cut.force_one else "rho_over_a"
    for key, w in r6.items():
        tilde.append(ModTerm(key, w * inv_omega, tag, 0, key[0], key[1]))
        nr.append(ModTerm(key, w, "const" if cut.force_one else "rho", 0, key[0], key[1]))
        if not cut.force_one:
            res.append(ModTerm(key, w, "one_minus_rho", 0, key[0], key[1]))
    pkg.tilde_phi6 = ModulatedPolynomial(pkg.N, tilde, cut.delta, adm)
    pkg.r6_nr = ModulatedPolynomial(pkg.N, nr, cut.delta, adm)
    pkg.r6_r = ModulatedPolynomial(pkg.N, res, cut.delta, adm)
    F1, F2 = bracket_split(pkg.chi4, pkg.tilde_phi6)
    pkg.correction = F1 + F2


def build_package(N: int, tk: int, params: ModelParams, cutoff: CutoffSpec | None = None,
                  beta: float | None = None) -> NormalFormPackage:
    """Run the whole construction.

    ``cutoff`` defaults to ``delta = beta^(-13/10)`` at ``params.beta``.
    """
    beta = params.beta if beta is None else beta
    cutoff = CutoffSpec.auto(beta) if cutoff is None else cutoff
    pkg = NormalFormPackage(N, tk, cutoff, params)
    pkg.h2 = SparsePolynomial.h2(N)
    pkg.h4 = build_h2j(N, params, 2)
    pkg.h6 = build_h2j(N, params, 3)
    build_z4_chi4(pkg)
    build_z6_chi6(pkg)
    build_phi_corrections(pkg)
    build_tilde_phi6(pkg, None if cutoff.force_one else cutoff.beta)
    return pkg


def with_cutoff(pkg: NormalFormPackage, cutoff: CutoffSpec) -> NormalFormPackage:
    """Copy of ``pkg`` with only the cutoff-dependent objects rebuilt.

    Everything up to ``Z6`` and ``chi6`` is independent of ``delta``, so sweeps
    over ``beta`` or ``delta`` reuse it.
    """
    new = replace(pkg, cutoff=cutoff)
    build_tilde_phi6(new, None if cutoff.force_one else cutoff.beta)
    return new


# -- evaluation ------------------------------------------------------------------

def phi6_evaluate(pkg: NormalFormPackage, states, fast: bool = True):
    phi = pkg.phi6_fast if fast else pkg.phi6_total
    out = phi.evaluate(states)
    return float(out[0]) if np.ndim(states) == 1 or hasattr(states, "coeffs") else out


def _flow_derivative(d1, d2, g):
    # psi' = -i g, psibar' = i conj(g)
    return np.real(np.sum(d1 * (-1j * g) + d2 * (1j * np.conj(g)), axis=-1))


def phi6_time_derivative(pkg: NormalFormPackage, states, params: ModelParams,
                         fast: bool = True):
    """``d/dt Phi^(6)`` along the flow ``i psi' = 2 dH/dpsibar``.

    Equal to ``-2 {H, Phi^(6)}`` with the bracket of this package.
    """
    states = np.atleast_2d(np.asarray(states.coeffs if hasattr(states, "coeffs") else states))
    if not fast:
        d1, d2 = pkg.phi6_total.gradient(states)
        return _flow_derivative(d1, d2, gradient_H(states, params))
    return pkg.phi6_fast.directional(states, -1j * gradient_H(states, params))


def time_derivative(f, states, params: ModelParams):
    """``d/dt f`` along the flow for any polynomial or modulated polynomial."""
    states = np.asarray(states.coeffs if hasattr(states, "coeffs") else states)
    d1, d2 = gradient(f, states)
    return _flow_derivative(d1, d2, gradient_H(states, params))


def phi6_bracket_H(pkg: NormalFormPackage, states, params: ModelParams):
    """``{H, Phi^(6)}`` (``= -1/2`` the time derivative)."""
    return -0.5 * phi6_time_derivative(pkg, states, params)


# -- identity checks ------------------------------------------------------------

def homological_residues(pkg: NormalFormPackage) -> dict:
    """Coefficient sup norms of the defining identities (all should vanish)."""
    g_range = kernel_range_split(pkg.g6)[1]
    order4 = poisson_bracket(pkg.h2, pkg.phi_k4) + poisson_bracket(pkg.h4, pkg.phi_k2)
    order6 = (poisson_bracket(pkg.h2, pkg.phi_k6) + poisson_bracket(pkg.h4, pkg.phi_k4)
              + poisson_bracket(pkg.h6, pkg.phi_k2) + pkg.r6)
    return {
        "h2_z4": sup_norm(poisson_bracket(pkg.h2, pkg.z4)),
        "h2_z6": sup_norm(poisson_bracket(pkg.h2, pkg.z6)),
        "chi4_equation": sup_norm(lh2_apply(pkg.chi4) + pkg.h4_range),
        "chi6_equation": sup_norm(lh2_apply(pkg.chi6) + g_range),
        "order4_line": sup_norm(order4),
        "order6_line": sup_norm(order6),
    }


def nonres_residual(pkg: NormalFormPackage, states) -> np.ndarray:
    """Relative pointwise gap in ``{Z4, tilde Phi} = sum_k W_k rho(a_k/delta)``."""
    lhs = bracket_value(pkg.z4, pkg.tilde_phi6, states)
    rhs = evaluate(pkg.r6_nr, states)
    scale = np.maximum(np.abs(rhs), np.abs(lhs))
    scale = np.where(scale > 0, scale, 1.0)
    return np.abs(lhs - rhs) / scale


@dataclass
class DecompositionReport:
    exponents: list[float]
    median_exponent: float | None
    homological: dict
    modulated_residue: float
    nonres_residue: float
    degenerate: bool
    passed: bool
    raw: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(self.__dict__)


def residual_R(pkg: NormalFormPackage, states, params: ModelParams) -> np.ndarray:
    """``{H, Phi^(6)} + R6^R`` evaluated pointwise."""
    return np.real(phi6_bracket_H(pkg, states, params) + evaluate(pkg.r6_r, states))


def derivative_decomposition_check(pkg: NormalFormPackage, states, params: ModelParams,
                                   lambdas: Sequence[float] = (0.5, 0.25, 0.125),
                                   min_exponent: float = 7.8) -> DecompositionReport:
    """Check that ``{H, Phi^(6)} + R6^R`` is of order eight.

    Exact cancellations are verified at coefficient level (order four and six
    lines) and pointwise (the two modulated identities); the remaining
    residual is evaluated on ``lambda * psi`` and a power law is fitted.
    """
    states = np.atleast_2d(np.asarray(states))
    hom = homological_residues(pkg)
    mod = np.real(bracket_value(pkg.h4_range, pkg.tilde_phi6, states)
                  + bracket_value(pkg.h2, pkg.correction, states))
    mod_scale = np.max(np.abs(bracket_value(pkg.h4_range, pkg.tilde_phi6, states))) or 1.0
    nonres = nonres_residual(pkg, states) if len(pkg.r6) else np.zeros(1)
    lam = np.asarray(lambdas, dtype=float)
    vals = np.array([np.abs(residual_R(pkg, l * states, params)) for l in lam])
    exps = []
    for col in vals.T:
        if np.all(col > 0):
            exps.append(float(np.polyfit(np.log(lam), np.log(col), 1)[0]))
    med = float(np.median(exps)) if exps else None
    degenerate = len(pkg.r6) == 0
    ok = med is not None and med >= min_exponent
    return DecompositionReport(exps, med, hom, float(np.max(np.abs(mod)) / mod_scale),
                               float(np.max(nonres)), degenerate, bool(ok),
                               {"lambdas": lam.tolist(), "residuals": vals.tolist()})


def admissibility_tags(pkg: NormalFormPackage) -> dict:
    names = ["phi_k2", "phi_k4", "phi_k6", "tilde_phi6", "correction"]
    return {n: (getattr(pkg, n).adm.M, getattr(pkg, n).adm.tk) for n in names}


# -- serialization -----------------------------------------------------------------

_PLAIN = ["h4", "h6", "z4", "chi4", "z6", "chi6", "phi_k2", "phi_k4", "phi_k6", "r6"]
_MOD = ["tilde_phi6", "correction", "r6_nr", "r6_r"]


def package_to_json(pkg: NormalFormPackage) -> dict:
    p = pkg.params
    obj = {"N": pkg.N, "tk": pkg.tk,
           "cutoff": {"delta": pkg.cutoff.delta, "beta": pkg.cutoff.beta,
                      "force_one": pkg.cutoff.force_one},
           "params": {"c": list(p.c), "beta": p.beta, "N": p.N},
           "objects": {}}
    for name in _PLAIN + _MOD:
        f = getattr(pkg, name)
        obj["objects"][name] = {"degree": getattr(f, "degree", None),
                                "adm": [f.adm.M, f.adm.tk] if f.adm else None,
                                "terms": polynomial_to_lines(f)}
    return obj


def package_from_json(obj: dict) -> NormalFormPackage:
    p = obj["params"]
    params = ModelParams(tuple(p["c"]), p["beta"], p["N"])
    c = obj["cutoff"]
    pkg = NormalFormPackage(obj["N"], obj["tk"], CutoffSpec(c["delta"], c["beta"], c["force_one"]),
                            params)
    N = pkg.N
    for name in _PLAIN + _MOD:
        rec = obj["objects"][name]
        f = polynomial_from_lines(rec["terms"], N)
        if name in _PLAIN and rec["degree"] is not None and len(f) == 0:
            f = SparsePolynomial(N, rec["degree"] // 2)
        if name in _MOD and len(f) == 0:
            f = ModulatedPolynomial(N, (), pkg.cutoff.delta)
        adm = Admissibility(*rec["adm"]) if rec["adm"] else None
        setattr(pkg, name, f.with_adm(adm))
    pkg.h2 = SparsePolynomial.h2(N)
    pkg.h4_range = kernel_range_split(pkg.h4)[1]
    pkg.g6 = pkg.z6 + (-lh2_apply(pkg.chi6))
    return pkg


def save_package(path, pkg: NormalFormPackage) -> None:
    Path(path).write_text(json.dumps(package_to_json(pkg)))


def load_package(path) -> NormalFormPackage:
    return package_from_json(json.loads(Path(path).read_text()))
