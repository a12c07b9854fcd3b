"""Sparse Fourier-indexed polynomials and their Poisson algebra.

A monomial ``psi_{k1}...psi_{kn} conj(psi_{k(n+1)})...conj(psi_{k2n})`` is
keyed by the pair ``(holo, anti)`` of ascending tuples, so every multiset of
indices has exactly one key and repeated factors are folded into the
coefficient.  Only zero-momentum monomials (``sum(holo) == sum(anti)``) are
admitted.

Two containers live here:

``SparsePolynomial``
    a homogeneous polynomial ``sum f_key * monomial(key)`` with constant
    complex coefficients.
``ModulatedPolynomial``
    terms ``c * h^(r)(a) * monomial`` whose coefficient is a closed-form
    function ``h`` (selected by a tag) of a signed action combination
    ``a = sum_plus |psi_l|^2 - sum_minus |psi_l|^2``.  Bracketing with a plain
    polynomial differentiates ``h``, which is why the derivative order ``r``
    is part of every term.

The Poisson bracket is
``{f, g} = -i sum_k (df/dpsi_k dg/dpsibar_k - dg/dpsi_k df/dpsibar_k)``.
"""
from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from heapq import merge as _heapmerge
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .fourier_state import FourierState, modes, truncation_of

Key = tuple[tuple[int, ...], tuple[int, ...]]

#: Number of scalar products evaluated per chunk (bounds peak memory).
_CHUNK = 1 << 21


def canonical(holo: Iterable[int], anti: Iterable[int]) -> Key:
    return tuple(sorted(holo)), tuple(sorted(anti))


def is_resonant(key: Key) -> bool:
    """Kernel membership of ``L_{H2}``: equal squared sums of the two halves."""
    h, a = key
    return sum(k * k for k in h) == sum(k * k for k in a)


def is_trivial(key: Key) -> bool:
    """A pure product of actions (same multiset on both halves)."""
    return key[0] == key[1]


def lh2_eigenvalue(key: Key) -> complex:
    """Multiplier of ``{H2, .}`` on the monomial ``key``.

    With ``H2 = 1/2 sum k^2 |psi_k|^2`` and the bracket above one finds
    ``{H2, m} = (i/2)(sum_holo k^2 - sum_anti k^2) m``.
    """
    h, a = key
    return 0.5j * (sum(k * k for k in h) - sum(k * k for k in a))


def _remove_one(t: tuple[int, ...], k: int) -> tuple[int, ...]:
    i = t.index(k)
    return t[:i] + t[i + 1 :]


def _merge(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    if not a:
        return b
    if not b:
        return a
    return tuple(_heapmerge(a, b))


def _multinomial(t: tuple[int, ...]) -> int:
    out = math.factorial(len(t))
    for m in Counter(t).values():
        out //= math.factorial(m)
    return out


@dataclass(frozen=True)
class Admissibility:
    """Metadata for an ``(M, tk)``-admissible index relation.

    Only the bound ``M`` and the target mode are tracked; a bracket with any
    zero-momentum polynomial doubles ``M``.
    """

    M: int
    tk: int

    def doubled(self) -> "Admissibility":
        return Admissibility(2 * self.M, self.tk)

    @staticmethod
    def join(a: "Admissibility | None", b: "Admissibility | None") -> "Admissibility | None":
        if a is None:
            return b
        if b is None:
            return a
        if a.tk != b.tk:
            return None
        return Admissibility(max(a.M, b.M), a.tk)


class SparsePolynomial:
    """Homogeneous zero-momentum polynomial of degree ``2n`` over ``|k| <= N``.

    Parameters
    ----------
    N : int
        Truncation radius of the ambient phase space.
    n : int
        Half degree; every monomial has ``n`` holomorphic and ``n``
        antiholomorphic factors.
    terms : mapping, optional
        ``Key -> complex``.  Keys are canonicalised and exact zeros dropped.
    adm : Admissibility, optional
        Admissibility bookkeeping carried through brackets.

    Notes
    -----
    Instances are treated as immutable values; arithmetic returns new
    objects.  Compiled index arrays used by :func:`evaluate` and
    :func:`gradient` are cached on first use.
    """

    __slots__ = ("N", "n", "_terms", "adm", "_compiled")

    def __init__(self, N: int, n: int, terms: Mapping[Key, complex] | None = None,
                 adm: Admissibility | None = None, *, _trusted: bool = False):
        self.N = int(N)
        self.n = int(n)
        self.adm = adm
        self._compiled = None
        if terms is None:
            self._terms: dict[Key, complex] = {}
        elif _trusted:
            self._terms = {k: v for k, v in terms.items() if v != 0}
        else:
            acc: dict[Key, complex] = defaultdict(complex)
            for (h, a), v in terms.items():
                key = canonical(h, a)
                self._check_key(key)
                acc[key] += complex(v)
            self._terms = {k: v for k, v in acc.items() if v != 0}

    def _check_key(self, key: Key) -> None:
        h, a = key
        if len(h) != self.n or len(a) != self.n:
            raise ValueError(f"monomial {key} does not have degree {2 * self.n}")
        if sum(h) != sum(a):
            raise ValueError(f"monomial {key} violates zero momentum")
        if any(abs(k) > self.N for k in h + a):
            raise ValueError(f"monomial {key} leaves the truncation |k| <= {self.N}")

    # -- constructors -----------------------------------------------------

    @classmethod
    def action(cls, N: int, k: int) -> "SparsePolynomial":
        """``|psi_k|^2`` tagged as ``(1, k)``-admissible."""
        return cls(N, 1, {((k,), (k,)): 1.0}, adm=Admissibility(1, k))

    @classmethod
    def h2(cls, N: int) -> "SparsePolynomial":
        return cls(N, 1, {((k,), (k,)): 0.5 * k * k for k in range(-N, N + 1)})

    @classmethod
    def zero(cls, N: int, n: int) -> "SparsePolynomial":
        return cls(N, n)

    # -- container protocol -----------------------------------------------

    @property
    def degree(self) -> int:
        return 2 * self.n

    @property
    def terms(self) -> Mapping[Key, complex]:
        return self._terms

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator[Key]:
        return iter(self._terms)

    def __contains__(self, key) -> bool:
        return canonical(*key) in self._terms

    def coeff(self, holo, anti) -> complex:
        return self._terms.get(canonical(holo, anti), 0j)

    def __repr__(self):
        return f"SparsePolynomial(N={self.N}, degree={self.degree}, terms={len(self)})"

    def _like(self, terms, adm="same") -> "SparsePolynomial":
        return SparsePolynomial(self.N, self.n, terms, self.adm if adm == "same" else adm,
                                _trusted=True)

    # -- linear structure -------------------------------------------------

    def _check_compatible(self, other: "SparsePolynomial") -> None:
        if not isinstance(other, SparsePolynomial):
            raise TypeError(f"expected SparsePolynomial, got {type(other).__name__}")
        if other.N != self.N:
            raise ValueError(f"mixed truncations N={self.N} and N={other.N}")

    def __add__(self, other: "SparsePolynomial") -> "SparsePolynomial":
        self._check_compatible(other)
        if not len(other):
            return self._like(self._terms, Admissibility.join(self.adm, other.adm))
        if not len(self):
            return self._like(other._terms, Admissibility.join(self.adm, other.adm))
        if other.n != self.n:
            raise ValueError(f"cannot add degrees {self.degree} and {other.degree}")
        acc = dict(self._terms)
        for k, v in other._terms.items():
            acc[k] = acc.get(k, 0j) + v
        return self._like(acc, Admissibility.join(self.adm, other.adm))

    def __neg__(self) -> "SparsePolynomial":
        return self._like({k: -v for k, v in self._terms.items()})

    def __sub__(self, other: "SparsePolynomial") -> "SparsePolynomial":
        return self + (-other)

    def __mul__(self, s) -> "SparsePolynomial":
        s = complex(s)
        return self._like({k: s * v for k, v in self._terms.items()})

    __rmul__ = __mul__

    def __truediv__(self, s) -> "SparsePolynomial":
        return self * (1.0 / complex(s))

    def with_adm(self, adm: Admissibility | None) -> "SparsePolynomial":
        return self._like(self._terms, adm)

    def conj(self) -> "SparsePolynomial":
        """Complex conjugate function (swap halves, conjugate coefficients)."""
        return self._like({(a, h): v.conjugate() for (h, a), v in self._terms.items()})

    def filter(self, pred: Callable[[Key], bool]) -> "SparsePolynomial":
        return self._like({k: v for k, v in self._terms.items() if pred(k)})

    def prune(self, tol: float) -> "SparsePolynomial":
        return self._like({k: v for k, v in self._terms.items() if abs(v) > tol})

    def restrict(self, N: int) -> "SparsePolynomial":
        """Drop monomials involving modes beyond ``N`` and rebase the truncation."""
        terms = {k: v for k, v in self._terms.items()
                 if all(abs(m) <= N for m in k[0] + k[1])}
        return SparsePolynomial(N, self.n, terms, self.adm, _trusted=True)

    def is_real(self, tol: float = 1e-12) -> bool:
        return sup_norm(self - self.conj()) <= tol * max(1.0, sup_norm(self))

    # -- compiled form ----------------------------------------------------

    def compiled(self):
        if self._compiled is None:
            T = len(self._terms)
            holo = np.empty((T, self.n), dtype=np.intp)
            anti = np.empty((T, self.n), dtype=np.intp)
            coeff = np.empty(T, dtype=complex)
            for i, ((h, a), v) in enumerate(self._terms.items()):
                holo[i] = h
                anti[i] = a
                coeff[i] = v
            self._compiled = (holo + self.N, anti + self.N, coeff)
        return self._compiled


def sup_norm(f) -> float:
    """``|||f|||``: the largest coefficient modulus (0 for the empty polynomial)."""
    if isinstance(f, ModulatedPolynomial):
        return max((abs(t.coeff) for t in f.terms), default=0.0)
    return max((abs(v) for v in f.terms.values()), default=0.0)


# -- Poisson bracket --------------------------------------------------------

def _index_by_mode(f: SparsePolynomial, half: int):
    """mode -> list of (holo, anti, coeff*multiplicity) with one factor removed."""
    out: dict[int, list] = defaultdict(list)
    for key, c in f.terms.items():
        part = key[half]
        for k, mult in Counter(part).items():
            if half == 0:
                out[k].append((_remove_one(key[0], k), key[1], c * mult))
            else:
                out[k].append((key[0], _remove_one(key[1], k), c * mult))
    return out


def _bracket_terms(f: SparsePolynomial, g: SparsePolynomial) -> dict[Key, complex]:
    acc: dict[Key, complex] = defaultdict(complex)
    for sign, left, right in ((-1j, f, g), (1j, g, f)):
        # sign * (d left/d psi_k) * (d right/d psibar_k)
        lh = _index_by_mode(left, 0)
        ra = _index_by_mode(right, 1)
        for k, lterms in lh.items():
            rterms = ra.get(k)
            if not rterms:
                continue
            for h1, a1, c1 in lterms:
                for h2, a2, c2 in rterms:
                    key = (_merge(h1, h2), _merge(a1, a2))
                    acc[key] += sign * c1 * c2
    return acc


def poisson_bracket(f, g):
    """``{f, g}`` for plain polynomials, or plain with modulated (either order).

    Two modulated arguments are rejected: the construction never needs them.
    """
    if isinstance(f, ModulatedPolynomial) and isinstance(g, ModulatedPolynomial):
        raise TypeError("brackets of two modulated polynomials are not supported")
    if isinstance(g, ModulatedPolynomial):
        F1, F2 = bracket_split(f, g)
        return F1 + F2
    if isinstance(f, ModulatedPolynomial):
        F1, F2 = bracket_split(g, f)
        return -(F1 + F2)
    f._check_compatible(g)
    if f.n == 0 or g.n == 0:
        return SparsePolynomial(f.N, max(f.n + g.n - 1, 0))
    acc = _bracket_terms(f, g)
    adm = _bracket_adm(f.adm, g.adm)
    out = SparsePolynomial(f.N, f.n + g.n - 1, acc, adm, _trusted=True)
    for h, a in out.terms:
        assert sum(h) == sum(a), "bracket produced a momentum-violating monomial"
    return out


def _bracket_adm(a: Admissibility | None, b: Admissibility | None):
    tagged = [x for x in (a, b) if x is not None]
    if not tagged:
        return None
    if len(tagged) == 2 and a.tk != b.tk:
        return None
    return Admissibility(2 * max(x.M for x in tagged), tagged[0].tk)


def lh2_apply(f: SparsePolynomial) -> SparsePolynomial:
    """``L_{H2} f = {H2, f}``, diagonal on monomials."""
    return f._like({k: lh2_eigenvalue(k) * v for k, v in f.terms.items()})


def kernel_range_split(f: SparsePolynomial) -> tuple[SparsePolynomial, SparsePolynomial]:
    kern = {k: v for k, v in f.terms.items() if is_resonant(k)}
    rng = {k: v for k, v in f.terms.items() if not is_resonant(k)}
    return f._like(kern), f._like(rng)


def lh2_invert(f: SparsePolynomial) -> SparsePolynomial:
    out = {}
    for k, v in f.terms.items():
        lam = lh2_eigenvalue(k)
        if lam == 0:
            raise ValueError(f"cannot invert L_H2 on kernel monomial holo={k[0]} anti={k[1]}")
        out[k] = v / lam
    return f._like(out)


def product(f: SparsePolynomial, g: SparsePolynomial) -> SparsePolynomial:
    f._check_compatible(g)
    acc: dict[Key, complex] = defaultdict(complex)
    for (h1, a1), c1 in f.terms.items():
        for (h2, a2), c2 in g.terms.items():
            acc[(_merge(h1, h2), _merge(a1, a2))] += c1 * c2
    return SparsePolynomial(f.N, f.n + g.n, acc, Admissibility.join(f.adm, g.adm), _trusted=True)


def enumerate_monomials(N: int, n: int) -> Iterator[Key]:
    """All canonical zero-momentum monomials of degree ``2n`` over ``|k| <= N``."""
    from itertools import combinations_with_replacement

    halves = defaultdict(list)
    for t in combinations_with_replacement(range(-N, N + 1), n):
        halves[sum(t)].append(t)
    for s, group in halves.items():
        for h in group:
            for a in group:
                yield (h, a)


def power_sum_polynomial(N: int, j: int, scale: float = 1.0) -> SparsePolynomial:
    """``scale * (2 pi)^(1-j) * sum over ordered zero-momentum index lists``.

    Folding the ordered sum onto canonical keys multiplies each monomial by
    the number of distinct orderings of each half.  With this weight,
    evaluation reproduces ``scale * int |psi|^(2j) dx``.
    """
    base = scale * (2.0 * math.pi) ** (1 - j)
    terms = {}
    for key in enumerate_monomials(N, j):
        terms[key] = base * _multinomial(key[0]) * _multinomial(key[1])
    return SparsePolynomial(N, j, terms, _trusted=True)


# -- numerical evaluation ---------------------------------------------------

def _as_batch(state) -> tuple[np.ndarray, bool]:
    psi = state.coeffs if isinstance(state, FourierState) else np.asarray(state, dtype=complex)
    single = psi.ndim == 1
    return np.atleast_2d(psi), single


def _check_state(N_poly: int, psi: np.ndarray) -> int:
    Ns = truncation_of(psi)
    if Ns < N_poly:
        raise ValueError(f"state truncation {Ns} smaller than polynomial truncation {N_poly}")
    return Ns


def _chunks(T: int, S: int, width: int):
    step = max(1, _CHUNK // max(1, S * max(width, 1)))
    for lo in range(0, T, step):
        yield lo, min(T, lo + step)


def _monomial_values(psi, psib, holo, anti):
    out = psi[:, holo[:, 0]] if holo.shape[1] else np.ones((psi.shape[0], holo.shape[0]), complex)
    for j in range(1, holo.shape[1]):
        out = out * psi[:, holo[:, j]]
    for j in range(anti.shape[1]):
        out = out * psib[:, anti[:, j]]
    return out


def evaluate(f, state) -> complex | np.ndarray:
    """Value of ``f`` on one state (complex scalar) or a batch (array)."""
    psi, single = _as_batch(state)
    if isinstance(f, ModulatedPolynomial):
        val = f._evaluate(psi)
    else:
        val = _evaluate_plain(f, psi)
    return complex(val[0]) if single else val


def _evaluate_plain(f: SparsePolynomial, psi: np.ndarray) -> np.ndarray:
    S = psi.shape[0]
    if not len(f):
        return np.zeros(S, dtype=complex)
    Ns = _check_state(f.N, psi)
    holo, anti, coeff = f.compiled()
    off = Ns - f.N
    holo, anti = holo + off, anti + off
    psib = psi.conj()
    out = np.zeros(S, dtype=complex)
    for lo, hi in _chunks(len(coeff), S, 2 * f.n):
        out += _monomial_values(psi, psib, holo[lo:hi], anti[lo:hi]) @ coeff[lo:hi]
    return out


def _scatter(idx: np.ndarray, width: int) -> sp.csr_matrix:
    T = idx.shape[0]
    return sp.csr_matrix((np.ones(T), (np.arange(T), idx)), shape=(T, width))


def _plain_gradient(holo, anti, weights, psi, psib, width):
    """Accumulate ``d/dpsi`` and ``d/dpsibar`` of ``sum_t w[s,t] * monomial_t``.

    ``weights`` is either a coefficient vector ``(T,)`` or a per-sample
    array ``(S, T)`` (used for modulated coefficients).
    """
    S = psi.shape[0]
    T = holo.shape[0]
    factors = [psi[:, holo[:, j]] for j in range(holo.shape[1])]
    factors += [psib[:, anti[:, j]] for j in range(anti.shape[1])]
    idx = [holo[:, j] for j in range(holo.shape[1])] + [anti[:, j] for j in range(anti.shape[1])]
    nf = len(factors)
    prefix = [np.ones((S, T), dtype=complex)]
    for j in range(nf - 1):
        prefix.append(prefix[-1] * factors[j])
    suffix = np.ones((S, T), dtype=complex)
    d_psi = np.zeros((S, width), dtype=complex)
    d_psib = np.zeros((S, width), dtype=complex)
    for j in range(nf - 1, -1, -1):
        loo = prefix[j] * suffix * weights
        target = d_psi if j < holo.shape[1] else d_psib
        target += (_scatter(idx[j], width).T @ loo.T).T
        suffix = suffix * factors[j]
    return d_psi, d_psib


def _factor_lists(holo, anti, psi, psib, v=None, vb=None):
    F = [psi[:, holo[:, j]] for j in range(holo.shape[1])]
    F += [psib[:, anti[:, j]] for j in range(anti.shape[1])]
    idx = [holo[:, j] for j in range(holo.shape[1])] + [anti[:, j] for j in range(anti.shape[1])]
    dF = None
    if v is not None:
        dF = [v[:, holo[:, j]] for j in range(holo.shape[1])]
        dF += [vb[:, anti[:, j]] for j in range(anti.shape[1])]
    return F, dF, idx


def _leave_one_out_dual(F, dF):
    """Yield ``(j, prod_{i != j} F_i, its tangent)`` and finally the full product.

    Tangents follow the product rule with ``dF``; they are ``None`` when
    ``dF`` is ``None``.
    """
    n = len(F)
    one = np.ones_like(F[0])
    pre, dpre = [one], [np.zeros_like(one) if dF is not None else None]
    for j in range(n - 1):
        pre.append(pre[j] * F[j])
        if dF is not None:
            dpre.append(dpre[j] * F[j] + pre[j] * dF[j])
    suf = one
    dsuf = np.zeros_like(one) if dF is not None else None
    for j in range(n - 1, -1, -1):
        loo = pre[j] * suf
        dloo = dpre[j] * suf + pre[j] * dsuf if dF is not None else None
        yield j, loo, dloo
        if dF is not None:
            dsuf = dsuf * F[j] + suf * dF[j]
        suf = suf * F[j]
    yield -1, suf, dsuf


def gradient_with_tangent(f: SparsePolynomial, state, v):
    """Gradient of ``f`` and its directional derivative along ``v``.

    Returns ``(d1, d2, t1, t2)`` where ``d1 = df/dpsi``, ``d2 = df/dpsibar`` and
    ``t1, t2`` are their derivatives in the direction ``(v, conj(v))``.
    Forward-mode (dual number) arithmetic keeps this exact.
    """
    psi, _ = _as_batch(state)
    v = np.atleast_2d(np.asarray(v, dtype=complex))
    S, width = psi.shape
    out = [np.zeros((S, width), dtype=complex) for _ in range(4)]
    if not len(f):
        return tuple(out)
    Ns = _check_state(f.N, psi)
    holo, anti, coeff = f.compiled()
    off = Ns - f.N
    psib, vb = psi.conj(), v.conj()
    nh = f.n
    for lo, hi in _chunks(len(coeff), S, 8 * f.n):
        H, A, c = holo[lo:hi] + off, anti[lo:hi] + off, coeff[lo:hi]
        F, dF, idx = _factor_lists(H, A, psi, psib, v, vb)
        for j, loo, dloo in _leave_one_out_dual(F, dF):
            if j < 0:
                break
            M = _scatter(idx[j], width).T
            k = 0 if j < nh else 1
            out[k] += (M @ (loo * c).T).T
            out[k + 2] += (M @ (dloo * c).T).T
    return tuple(out)


def monomial_jets(holo: np.ndarray, anti: np.ndarray, psi: np.ndarray, v: np.ndarray | None = None):
    """Per-monomial values and gradients (no coefficient, no summation).

    ``holo``/``anti`` are index arrays into the last axis of ``psi``.  Returns
    a dict with ``m`` ``(S, T)``, ``d1``/``d2`` ``(S, T, W)`` and, when ``v``
    is given, their tangents ``dm``, ``t1``, ``t2``.
    """
    S, W = psi.shape
    T = holo.shape[0]
    psib = psi.conj()
    vb = v.conj() if v is not None else None
    F, dF, idx = _factor_lists(holo, anti, psi, psib, v, vb)
    nh = holo.shape[1]
    rows = np.arange(T)
    out = {"d1": np.zeros((S, T, W), dtype=complex), "d2": np.zeros((S, T, W), dtype=complex)}
    if v is not None:
        out["t1"] = np.zeros((S, T, W), dtype=complex)
        out["t2"] = np.zeros((S, T, W), dtype=complex)
    for j, loo, dloo in _leave_one_out_dual(F, dF):
        if j < 0:
            out["m"] = loo
            if v is not None:
                out["dm"] = dloo
            break
        k = "d1" if j < nh else "d2"
        out[k][:, rows, idx[j]] += loo
        if v is not None:
            out["t" + k[1]][:, rows, idx[j]] += dloo
    return out


def gradient(f, state) -> tuple[np.ndarray, np.ndarray]:
    """Analytic ``(df/dpsi_k, df/dpsibar_k)`` over the state's modes."""
    psi, single = _as_batch(state)
    if isinstance(f, ModulatedPolynomial):
        d1, d2 = f._gradient(psi)
    else:
        d1, d2 = _gradient_plain(f, psi)
    if single:
        return d1[0], d2[0]
    return d1, d2


def _gradient_plain(f: SparsePolynomial, psi: np.ndarray):
    S, width = psi.shape
    d1 = np.zeros((S, width), dtype=complex)
    d2 = np.zeros((S, width), dtype=complex)
    if not len(f):
        return d1, d2
    Ns = _check_state(f.N, psi)
    holo, anti, coeff = f.compiled()
    off = Ns - f.N
    psib = psi.conj()
    for lo, hi in _chunks(len(coeff), S, 4 * f.n):
        a, b = _plain_gradient(holo[lo:hi] + off, anti[lo:hi] + off, coeff[lo:hi], psi, psib, width)
        d1 += a
        d2 += b
    return d1, d2


def bracket_value(f, g, state) -> complex | np.ndarray:
    """Numerical ``{f, g}`` at a state via gradient contraction."""
    psi, single = _as_batch(state)
    f1, f2 = gradient(f, psi)
    g1, g2 = gradient(g, psi)
    val = -1j * np.sum(f1 * g2 - g1 * f2, axis=-1)
    return complex(val[0]) if single else val


# -- smooth cutoff and modulated coefficients -------------------------------

def smoothstep(t, order: int = 0):
    """``S(t) = g(t)/(g(t)+g(1-t))`` with ``g(t) = exp(-1/t)`` and its derivatives.

    ``S`` is 0 for ``t <= 0``, 1 for ``t >= 1`` and ``C^inf`` everywhere.
    Written as ``expit(1/(1-t) - 1/t)`` for stability; ``S' = q S (1-S)``
    with ``q = 1/t^2 + 1/(1-t)^2``.
    """
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = (t > 0) & (t < 1)
    if order == 0:
        out[t >= 1] = 1.0
    ti = t[inside]
    if ti.size:
        S = expit(1.0 / (1.0 - ti) - 1.0 / ti)
        if order == 0:
            val = S
        else:
            q = 1.0 / ti**2 + 1.0 / (1.0 - ti) ** 2
            w = S * (1.0 - S)
            if order == 1:
                val = q * w
            elif order == 2:
                dq = 2.0 / (1.0 - ti) ** 3 - 2.0 / ti**3
                val = w * (dq + q * q * (1.0 - 2.0 * S))
            else:
                raise ValueError("smoothstep derivatives implemented up to order 2")
        out[inside] = np.nan_to_num(val)
    return out


def rho(x, order: int = 0):
    """Even cutoff: 0 on ``[-1, 1]``, 1 outside ``[-2, 2]``, smooth between."""
    x = np.asarray(x, dtype=float)
    base = smoothstep(np.abs(x) - 1.0, order)
    if order % 2 == 1:
        base = np.sign(x) * base
    return base


#: Tags for action-dependent coefficients.  All take ``(a, delta, order)``.
TAGS = ("const", "rho_over_a", "rho", "one_minus_rho", "inv")


def tag_function(tag: str, a, delta: float, order: int = 0):
    """``h^(order)(a)`` for a coefficient tag.

    ``rho_over_a`` is ``rho(a/delta)/a`` (identically 0 for ``|a| < delta``);
    ``inv`` is ``1/a`` (the cutoff forced to 1); ``rho`` and
    ``one_minus_rho`` are ``rho(a/delta)`` and ``1 - rho(a/delta)``.
    """
    a = np.asarray(a, dtype=float)
    if tag == "const":
        return np.ones_like(a) if order == 0 else np.zeros_like(a)
    if tag in ("rho", "one_minus_rho"):
        val = rho(a / delta, order) / delta**order
        if tag == "one_minus_rho":
            val = (1.0 - val) if order == 0 else -val
        return val
    if tag == "inv":
        with np.errstate(divide="ignore"):
            return (-1.0) ** order * math.factorial(order) / a ** (order + 1)
    if tag == "rho_over_a":
        out = np.zeros_like(a)
        mask = np.abs(a) >= delta
        am = a[mask]
        r0 = rho(am / delta, 0)
        if order == 0:
            out[mask] = r0 / am
        elif order == 1:
            out[mask] = rho(am / delta, 1) / (delta * am) - r0 / am**2
        elif order == 2:
            out[mask] = (rho(am / delta, 2) / (delta**2 * am)
                         - 2.0 * rho(am / delta, 1) / (delta * am**2) + 2.0 * r0 / am**3)
        else:
            raise ValueError("rho_over_a derivatives implemented up to order 2")
        return out
    raise ValueError(f"unknown coefficient tag {tag!r}")


def tag_bounds(tag: str, delta: float, r: int, samples: int = 20001) -> list[float]:
    """Numerical ``sup_a |h^(i)(a)|`` for ``i <= r`` (the ``A_i`` up to the coefficient)."""
    a = np.concatenate([np.linspace(-4 * delta, 4 * delta, samples)])
    if tag == "inv":
        return [math.inf] * (r + 1)
    return [float(np.max(np.abs(tag_function(tag, a, delta, i)))) for i in range(r + 1)]


@dataclass(frozen=True)
class ModTerm:
    """One term ``coeff * h_tag^(order)(a) * monomial(key)``.

    ``plus``/``minus`` give ``a = sum_plus |psi|^2 - sum_minus |psi|^2``.
    """

    key: Key
    coeff: complex
    tag: str
    order: int
    plus: tuple[int, ...]
    minus: tuple[int, ...]

    @property
    def degree(self) -> int:
        return 2 * len(self.key[0])

    @property
    def group(self):
        return (self.tag, self.order, self.plus, self.minus)

    def signature(self) -> Counter:
        s = Counter(self.plus)
        s.subtract(self.minus)
        return s


class ModulatedPolynomial:
    """Sum of terms ``c * h^(r)(a) * m`` with ``h`` from a closed tag family.

    Parameters
    ----------
    N : int
        Truncation radius.
    terms : iterable of ModTerm
        Duplicate ``(key, tag, order, plus, minus)`` entries are merged.
    delta : float
        Cutoff width shared by every tag in the container.
    adm : Admissibility, optional
        Admissibility bookkeeping.
    """

    __slots__ = ("N", "delta", "adm", "_terms", "_compiled")

    def __init__(self, N: int, terms: Iterable[ModTerm] = (), delta: float = 1.0,
                 adm: Admissibility | None = None):
        self.N = int(N)
        self.delta = float(delta)
        self.adm = adm
        acc: dict = defaultdict(complex)
        for t in terms:
            if t.tag not in TAGS:
                raise ValueError(f"unknown coefficient tag {t.tag!r}")
            acc[(t.key, t.tag, t.order, t.plus, t.minus)] += t.coeff
        self._terms = [ModTerm(k, c, tag, o, p, m) for (k, tag, o, p, m), c in acc.items() if c != 0]
        self._compiled = None

    @property
    def terms(self) -> list[ModTerm]:
        return self._terms

    def __len__(self):
        return len(self._terms)

    def __repr__(self):
        return f"ModulatedPolynomial(N={self.N}, terms={len(self)}, delta={self.delta:.3g})"

    def degrees(self) -> set[int]:
        return {t.degree for t in self._terms}

    def by_degree(self, degree: int) -> "ModulatedPolynomial":
        return self._like([t for t in self._terms if t.degree == degree])

    def _like(self, terms, adm="same") -> "ModulatedPolynomial":
        return ModulatedPolynomial(self.N, terms, self.delta, self.adm if adm == "same" else adm)

    def __add__(self, other: "ModulatedPolynomial") -> "ModulatedPolynomial":
        if not isinstance(other, ModulatedPolynomial):
            raise TypeError("can only add ModulatedPolynomial objects")
        if other.N != self.N:
            raise ValueError(f"mixed truncations N={self.N} and N={other.N}")
        if len(self) and len(other) and other.delta != self.delta:
            raise ValueError("mixed cutoff widths")
        delta = self.delta if len(self) else other.delta
        return ModulatedPolynomial(self.N, self._terms + other._terms, delta,
                                   Admissibility.join(self.adm, other.adm))

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, s):
        s = complex(s)
        return self._like([ModTerm(t.key, s * t.coeff, t.tag, t.order, t.plus, t.minus)
                           for t in self._terms])

    __rmul__ = __mul__

    def with_tag(self, tag: str) -> "ModulatedPolynomial":
        return self._like([ModTerm(t.key, t.coeff, tag, t.order, t.plus, t.minus)
                           for t in self._terms])

    def with_adm(self, adm):
        return self._like(self._terms, adm)

    def derivative_bounds(self, r: int) -> list[float]:
        """``A_i`` for ``i <= r``: coefficient sup times tag-derivative sup."""
        out = [0.0] * (r + 1)
        for (tag, order), group in self._tag_groups().items():
            c = max(abs(t.coeff) for t in group)
            b = tag_bounds(tag, self.delta, r + order) if tag != "const" else [1.0] + [0.0] * (r + order)
            for i in range(r + 1):
                out[i] = max(out[i], c * b[i + order])
        return out

    def _tag_groups(self):
        g = defaultdict(list)
        for t in self._terms:
            g[(t.tag, t.order)].append(t)
        return g

    # -- numerics -----------------------------------------------------------

    def _compile(self):
        if self._compiled is None:
            blocks = []
            for (tag, order), group in self._tag_groups().items():
                bydeg = defaultdict(list)
                for t in group:
                    bydeg[t.degree].append(t)
                for deg, ts in bydeg.items():
                    n = deg // 2
                    T = len(ts)
                    holo = np.array([t.key[0] for t in ts], dtype=np.intp).reshape(T, n) + self.N
                    anti = np.array([t.key[1] for t in ts], dtype=np.intp).reshape(T, n) + self.N
                    coeff = np.array([t.coeff for t in ts], dtype=complex)
                    rows, cols, vals = [], [], []
                    for i, t in enumerate(ts):
                        for k, s in t.signature().items():
                            if s:
                                rows.append(i)
                                cols.append(k + self.N)
                                vals.append(float(s))
                    sig = sp.csr_matrix((vals, (rows, cols)), shape=(T, 2 * self.N + 1))
                    blocks.append((tag, order, holo, anti, coeff, sig))
            self._compiled = blocks
        return self._compiled

    def _evaluate(self, psi: np.ndarray) -> np.ndarray:
        S = psi.shape[0]
        out = np.zeros(S, dtype=complex)
        if not self._terms:
            return out
        Ns = _check_state(self.N, psi)
        off = Ns - self.N
        psi_l = psi[:, off : off + 2 * self.N + 1]
        I = np.abs(psi_l) ** 2
        psib = psi.conj()
        for tag, order, holo, anti, coeff, sig in self._compile():
            a = (sig @ I.T).T
            h = tag_function(tag, a, self.delta, order)
            for lo, hi in _chunks(len(coeff), S, holo.shape[1] * 2 + 2):
                mono = _monomial_values(psi, psib, holo[lo:hi] + off, anti[lo:hi] + off)
                out += np.sum(mono * h[:, lo:hi] * coeff[lo:hi], axis=1)
        return out

    def _gradient(self, psi: np.ndarray):
        S, width = psi.shape
        d1 = np.zeros((S, width), dtype=complex)
        d2 = np.zeros((S, width), dtype=complex)
        if not self._terms:
            return d1, d2
        Ns = _check_state(self.N, psi)
        off = Ns - self.N
        psi_l = psi[:, off : off + 2 * self.N + 1]
        I = np.abs(psi_l) ** 2
        psib = psi.conj()
        for tag, order, holo, anti, coeff, sig in self._compile():
            a = (sig @ I.T).T
            h = tag_function(tag, a, self.delta, order)
            dh = tag_function(tag, a, self.delta, order + 1)
            for lo, hi in _chunks(len(coeff), S, 4 * holo.shape[1] + 4):
                H = holo[lo:hi] + off
                A = anti[lo:hi] + off
                g1, g2 = _plain_gradient(H, A, h[:, lo:hi] * coeff[lo:hi], psi, psib, width)
                d1 += g1
                d2 += g2
                # chain rule through a: da/dpsi_l = s_l conj(psi_l), da/dpsibar_l = s_l psi_l
                mono = _monomial_values(psi, psib, H, A)
                w = mono * dh[:, lo:hi] * coeff[lo:hi]
                ds = (sig[lo:hi].T @ w.T).T
                d1[:, off : off + 2 * self.N + 1] += ds * psib[:, off : off + 2 * self.N + 1]
                d2[:, off : off + 2 * self.N + 1] += ds * psi_l
        return d1, d2


def bracket_split(f: SparsePolynomial, g: ModulatedPolynomial):
    """``{f, g} = F1 + F2`` for plain ``f`` and modulated ``g``.

    ``F1 = sum h(a) {f, m}`` keeps every tag and has degree ``deg f + deg m - 2``;
    ``F2 = sum h'(a) m {f, a}`` raises the derivative order by one and has
    degree ``deg f + deg m``.
    """
    if not isinstance(f, SparsePolynomial):
        raise TypeError("first argument must be a SparsePolynomial")
    if f.N != g.N:
        raise ValueError(f"mixed truncations N={f.N} and N={g.N}")
    adm = _bracket_adm(f.adm, g.adm)
    f1_terms: list[ModTerm] = []
    f2_terms: list[ModTerm] = []
    bracket_with_action: dict[int, SparsePolynomial] = {}

    # Group g's terms by coefficient function so each {f, m} is computed once per monomial.
    by_key: dict[Key, list[ModTerm]] = defaultdict(list)
    for t in g.terms:
        by_key[t.key].append(t)
    n_m = {len(k[0]) for k in by_key}
    for n in n_m:
        keys = [k for k in by_key if len(k[0]) == n]
        for key in keys:
            mono = SparsePolynomial(g.N, n, {key: 1.0}, _trusted=True)
            br = poisson_bracket(f, mono)
            for t in by_key[key]:
                for bkey, bc in br.terms.items():
                    f1_terms.append(ModTerm(bkey, t.coeff * bc, t.tag, t.order, t.plus, t.minus))
    for t in g.terms:
        if t.tag == "const":
            continue
        for l, s in t.signature().items():
            if not s:
                continue
            if l not in bracket_with_action:
                bracket_with_action[l] = poisson_bracket(f.with_adm(None), SparsePolynomial.action(g.N, l).with_adm(None))
            for (h2, a2), bc in bracket_with_action[l].terms.items():
                key = (_merge(t.key[0], h2), _merge(t.key[1], a2))
                f2_terms.append(ModTerm(key, s * t.coeff * bc, t.tag, t.order + 1, t.plus, t.minus))
    F1 = ModulatedPolynomial(g.N, f1_terms, g.delta, adm)
    F2 = ModulatedPolynomial(g.N, f2_terms, g.delta, adm)
    return F1, F2


# -- Gaussian norm bounds ----------------------------------------------------

def lattice_sum() -> float:
    """``sum_{l in Z} 1/(1+l^2) = pi coth(pi)``."""
    return math.pi / math.tanh(math.pi)


def gaussian_constant(n: int) -> float:
    """``C_g(n) = 2^(n+2) [(2n)!]^(3/2) (2n-1)^2 (pi coth pi)^n``."""
    return 2.0 ** (n + 2) * math.factorial(2 * n) ** 1.5 * (2 * n - 1) ** 2 * lattice_sum() ** n


@dataclass
class NormCheckReport:
    estimate: float
    stderr: float
    bound: float
    improved_bound: float | None
    passed: bool
    n_samples: int

    def as_dict(self):
        return dict(self.__dict__)


def gaussian_norm_check(f, params, config, A0: float | None = None) -> NormCheckReport:
    """Monte Carlo ``||f||_{g,beta}`` against ``A0 C_g(n) / beta^n``.

    When ``f`` carries an admissibility tag ``(M, tk)`` the sharper bound
    ``A0 C_g(n) M^2 / ((1+tk^2) beta^n)`` is checked as well.
    """
    from .gibbs import sample_gaussian

    if isinstance(f, ModulatedPolynomial):
        degs = f.degrees()
        n = max(degs) // 2 if degs else 1
        if A0 is None:
            A0 = f.derivative_bounds(0)[0]
    else:
        n = f.n
        if A0 is None:
            A0 = sup_norm(f)
    states = sample_gaussian(config)
    vals = np.abs(evaluate(f, states)) ** 2
    m = vals.mean()
    est = math.sqrt(m)
    se = float(vals.std(ddof=1) / math.sqrt(len(vals)) / (2 * est)) if est > 0 else 0.0
    beta = config.params.beta
    bound = A0 * gaussian_constant(n) / beta**n
    improved = None
    ok = est <= bound
    if f.adm is not None:
        improved = A0 * gaussian_constant(n) * f.adm.M**2 / ((1 + f.adm.tk**2) * beta**n)
        ok = ok and est <= improved
    return NormCheckReport(est, se, bound, improved, bool(ok), len(vals))


# -- serialization ------------------------------------------------------------

def polynomial_to_lines(f) -> list[str]:
    lines = []
    if isinstance(f, ModulatedPolynomial):
        for t in sorted(f.terms, key=lambda t: (t.key, t.tag, t.order, t.plus, t.minus)):
            lines.append(json.dumps({
                "holo": list(t.key[0]), "anti": list(t.key[1]),
                "re": t.coeff.real, "im": t.coeff.imag,
                "tag": {"name": t.tag, "order": t.order, "plus": list(t.plus),
                        "minus": list(t.minus), "delta": f.delta},
            }))
    else:
        for key in sorted(f.terms):
            v = f.terms[key]
            lines.append(json.dumps({"holo": list(key[0]), "anti": list(key[1]),
                                     "re": v.real, "im": v.imag, "tag": "const"}))
    return lines


def polynomial_from_lines(lines: Iterable[str], N: int):
    rows = [json.loads(s) for s in lines if s.strip()]
    if rows and isinstance(rows[0]["tag"], dict):
        delta = rows[0]["tag"]["delta"]
        terms = [ModTerm(canonical(r["holo"], r["anti"]), complex(r["re"], r["im"]),
                         r["tag"]["name"], int(r["tag"]["order"]),
                         tuple(r["tag"]["plus"]), tuple(r["tag"]["minus"])) for r in rows]
        return ModulatedPolynomial(N, terms, delta)
    n = len(rows[0]["holo"]) if rows else 0
    return SparsePolynomial(N, n, {(tuple(r["holo"]), tuple(r["anti"])): complex(r["re"], r["im"])
                                   for r in rows})


def save_polynomial(path, f) -> None:
    Path(path).write_text("\n".join(polynomial_to_lines(f)) + "\n")


def load_polynomial(path, N: int):
    return polynomial_from_lines(Path(path).read_text().splitlines(), N)
