"""Monomial power counting, weighted kernel norms, and kernel scaling.

A monomial type is the triple (p_u, p_0, p_sp) counting plain fields,
time-derivative fields, and space-derivative fields.  Its scaling
dimension is Delta = (3/2) p_u + (7/2) p_0 + (5/2) p_sp; one block-spin
step multiplies the weighted norm of a type-p monomial by at most
L^5 sdf(p; C), and the types with L^5 sdf >= 1 form the relevant set.

Kernels are degree-p coefficient arrays over lattice points, stored as
entry lists (vectorized: an (N, p, 4) index array plus complex values).
Their norm is the l1-linf norm: the max over a distinguished argument of
the absolute sum over the others, each entry weighted by exp(m * tau)
with tau the minimum-spanning-tree length of the entry's points under
the periodic lattice metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from itertools import combinations

import numpy as np

from .lattice import AXES, Field, Lattice, forward_derivative

# low-degree watch list D and the full relevant set D_rel
D_WATCH = ((6, 0, 0), (1, 1, 0), (0, 1, 1), (0, 0, 2))
D_REL = ((2, 0, 0), (1, 0, 1), (4, 0, 0), (3, 0, 1)) + D_WATCH

# slot tags: plain field or derivative along an axis
TAG_PLAIN = "u"
TAG_DERIV = ("d0", "d1", "d2", "d3")


class Routing(Enum):
    """Destination of a monomial type generated during one step."""

    IRRELEVANT = "irrelevant"          # scaling-weight irrelevant -> high-degree part
    WATCH_LIST = "watch_list"          # in D -> low-degree part
    INTERACTION = "interaction"        # (4,0,0) -> renormalizes the quartic
    MASS_TERM = "mass_term"            # (2,0,0) -> chemical potential + remainders
    MIXED_RELEVANT = "mixed_relevant"  # (1,0,1), (3,0,1) -> localized away


@dataclass(frozen=True)
class RoutingDecision:
    ptype: tuple[int, int, int]
    routing: Routing
    routed_types: tuple[tuple[int, int, int], ...] = ()


def delta_dim(ptype) -> Fraction:
    """Scaling dimension Delta(p) = 3/2 p_u + 7/2 p_0 + 5/2 p_sp (exact)."""
    pu, p0, psp = ptype
    return Fraction(3, 2) * pu + Fraction(7, 2) * p0 + Fraction(5, 2) * psp


def classify(ptype) -> RoutingDecision:
    p = tuple(int(x) for x in ptype)
    if p in D_WATCH:
        return RoutingDecision(p, Routing.WATCH_LIST)
    if p == (4, 0, 0):
        return RoutingDecision(p, Routing.INTERACTION)
    if p == (2, 0, 0):
        return RoutingDecision(p, Routing.MASS_TERM, ((1, 1, 0), (0, 1, 1), (0, 0, 2)))
    if p == (1, 0, 1):
        return RoutingDecision(p, Routing.MIXED_RELEVANT, ((0, 1, 1), (0, 0, 2)))
    if p == (3, 0, 1):
        return RoutingDecision(p, Routing.MIXED_RELEVANT, ((2, 1, 1), (2, 0, 2)))
    return RoutingDecision(p, Routing.IRRELEVANT)


def is_relevant(ptype) -> bool:
    return tuple(ptype) in D_REL


# ---------------------------------------------------------------------------
# weight system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightSystem:
    """Field weights and step budgets of the parabolic flow.

    The exponents are tied to the couplings through t = log v0 / log(mu0 - mu*):
    eta = 1/2 + t/3, eta' = 3/2 - t - eps, eta_fl = (2/3 - 4 eps) t; the
    combination 3 eta + eta' = 3 - eps holds identically.
    """

    L: int
    eps: float
    v0: float
    mu_gap: float  # mu_0 - mu_*
    mass: float = 1.0

    def __post_init__(self):
        if not (0 < self.v0 < 1 and 0 < self.mu_gap < 1):
            raise ValueError("weight system needs 0 < v0, mu0 - mu* < 1")
        if self.mass < 0:
            raise ValueError("mass must be nonnegative")

    @property
    def t(self) -> float:
        return math.log(self.v0) / math.log(self.mu_gap)

    @property
    def eta(self) -> float:
        return 0.5 + self.t / 3.0

    @property
    def eta_prime(self) -> float:
        return 1.5 - self.t - self.eps

    @property
    def eta_fl(self) -> float:
        return (2.0 / 3.0 - 4.0 * self.eps) * self.t

    @property
    def n_p(self) -> float:
        """Upper bound on the number of parabolic-flow steps."""
        return math.log(self.v0 ** -(2.0 / 3.0 - 8.0 * self.eps), self.L)

    def window_violations(self) -> list[str]:
        """Exponent windows 3/4 + 2eps < eta < 7/8 - eps/3 and
        3/8 < eta' < 3/4 - 8 eps; empty list when both hold.  Note the eta'
        window is empty for eps > 3/64, so violations are reported, never
        raised."""
        out = []
        if not (0.75 + 2 * self.eps < self.eta < 0.875 - self.eps / 3.0):
            out.append(f"eta={self.eta:.6f} outside (3/4+2eps, 7/8-eps/3)")
        if not (0.375 < self.eta_prime < 0.75 - 8 * self.eps):
            out.append(f"eta'={self.eta_prime:.6f} outside (3/8, 3/4-8eps)")
        return out

    def kappa(self, n: int) -> float:
        return self.L ** (self.eta * n) / self.v0 ** (1.0 / 3.0 - self.eps)

    def kappa_prime(self, n: int) -> float:
        return self.L ** (self.eta_prime * n) / self.v0 ** (1.0 / 3.0 - self.eps)

    def kappa_fl(self, n: int) -> float:
        return (self.L**n / self.v0) ** (self.eps / 2.0)

    def r(self, n: int) -> float:
        """Radius of the truncated Gaussian fluctuation integral at step n."""
        return 0.25 * self.kappa_fl(n + 1)

    def e_fl(self, n: int) -> float:
        """Fluctuation-integral bound e_fl(n) = L^(eta_fl n) v0^(1/3 - 2 eps)."""
        return self.L ** (self.eta_fl * n) * self.v0 ** (1.0 / 3.0 - 2.0 * self.eps)

    def e_fl_ratio_identity(self, n: int) -> tuple[float, float]:
        """(e_fl(n) / kappa(n)^2, L^-(2 eta - eta_fl) n * v0^(1-4eps)) -- equal
        algebraically; with kappa(n+1)^2 the right side carries an extra
        factor L^-2 eta."""
        lhs = self.e_fl(n) / self.kappa(n) ** 2
        rhs = self.L ** (-(2.0 * self.eta - self.eta_fl) * n) * self.v0 ** (1.0 - 4.0 * self.eps)
        return lhs, rhs

    def v_n(self, n: int) -> float:
        return self.v0 / self.L**n


# ---------------------------------------------------------------------------
# scaling divergence factor
# ---------------------------------------------------------------------------


def sdf_log_L(ptype, C: float, ws: WeightSystem) -> float:
    """log_L of sdf(p; C) = C^|p| L^(-Delta) L^(eta p_u + eta'(p_0 + p_sp))."""
    pu, p0, psp = ptype
    tot = pu + p0 + psp
    return (
        tot * math.log(C, ws.L)
        - float(delta_dim(ptype))
        + ws.eta * pu
        + ws.eta_prime * (p0 + psp)
    )


def sdf(ptype, C: float, ws: WeightSystem) -> float:
    """sdf(p; C); may underflow to 0.0 for very large L."""
    return float(ws.L) ** sdf_log_L(ptype, C, ws)


def iter_types(cap: int, even_only: bool = True):
    """All types with 1 <= |p| <= cap; particle-number-preserving monomials
    have even total degree."""
    for tot in range(1, cap + 1):
        if even_only and tot % 2:
            continue
        for pu in range(tot + 1):
            for p0 in range(tot - pu + 1):
                yield (pu, p0, tot - pu - p0)


def sdf_sup(C: float, ws: WeightSystem, cap: int = 20) -> tuple[float, tuple, float]:
    """sup of sdf(p; C) over p not in D_rel with |p| <= cap (even degrees:
    the monomials are particle-number preserving).  Returns (sup, argmax,
    log_L sup) and asserts the monotone tail at the cap boundary.
    """
    if cap < 10:
        raise ValueError("cap must be at least 10")
    best, arg = -math.inf, None
    shell_max = {}
    for p in iter_types(cap):
        if p in D_REL:
            continue
        val = sdf_log_L(p, C, ws)
        tot = sum(p)
        shell_max[tot] = max(shell_max.get(tot, -math.inf), val)
        if val > best:
            best, arg = val, p
    if shell_max[cap] >= shell_max[cap - 2]:
        raise AssertionError("sdf tail not decreasing at the cap boundary")
    return float(ws.L) ** best, arg, best


def sdf_case_bound(ptype, ws: WeightSystem) -> float:
    """Case-split upper bound on log_L sdf(p; 1) for p outside D_rel:
    -8(3/2-eta) for |p|>=8; -(10-5eta-eta') for |p|=6 with a derivative;
    -(8-3eta-eta') for |p|=4 with p_0>=1; -(8-2eta-2eta') for |p|=4 with
    p_sp>=2; -(7-2eta') for (0,2,0)."""
    pu, p0, psp = ptype
    tot = pu + p0 + psp
    eta, etap = ws.eta, ws.eta_prime
    if tot >= 8:
        # -(3/2 - eta)|p|, i.e. -8(3/2 - eta) at |p| = 8 and tighter beyond
        return -(1.5 - eta) * tot
    if tot == 6 and p0 + psp >= 1:
        return -(10.0 - 5.0 * eta - etap)
    if tot == 4 and p0 >= 1:
        return -(8.0 - 3.0 * eta - etap)
    if tot == 4 and psp >= 2:
        return -(8.0 - 2.0 * eta - 2.0 * etap)
    if pu == 0 and psp == 0 and p0 == 2:
        return -(7.0 - 2.0 * etap)
    raise ValueError(f"type {ptype} not covered by the case split")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

SPARSE_ENTRY_LIMIT = 10**6


class Kernel:
    """Degree-p multilinear coefficient array with per-slot field tags.

    Entries are held as an (N, p, 4) array of point indices and a complex
    value per entry.  tags[i] is 'u' for a plain field slot and 'd0'..'d3'
    for a derivative slot.  All slots live on the same lattice.
    """

    def __init__(self, lattice: Lattice, tags, pts=None, vals=None,
                 translation_invariant: bool = False):
        self.lattice = lattice
        self.tags = tuple(tags)
        for t in self.tags:
            if t != TAG_PLAIN and t not in TAG_DERIV:
                raise ValueError(f"unknown slot tag {t}")
        p = len(self.tags)
        self.pts = (np.zeros((0, p, 4), dtype=np.int64) if pts is None
                    else np.asarray(pts, dtype=np.int64).reshape(-1, p, 4))
        self.vals = (np.zeros(0, dtype=complex) if vals is None
                     else np.asarray(vals, dtype=complex).ravel())
        if len(self.vals) != len(self.pts):
            raise ValueError("entry index/value length mismatch")
        self._wrap_inplace()
        self.translation_invariant = translation_invariant
        if p >= 3 and len(self.vals) > SPARSE_ENTRY_LIMIT:
            raise ValueError("degree >= 3 kernel exceeds the sparse entry limit")

    # -- basic structure ------------------------------------------------------

    @property
    def degree(self) -> int:
        return len(self.tags)

    @property
    def n_entries(self) -> int:
        return len(self.vals)

    @property
    def ptype(self) -> tuple[int, int, int]:
        pu = sum(1 for t in self.tags if t == TAG_PLAIN)
        p0 = sum(1 for t in self.tags if t == "d0")
        psp = len(self.tags) - pu - p0
        return (pu, p0, psp)

    def _wrap_inplace(self):
        shape = np.array(self.lattice.shape, dtype=np.int64)
        np.mod(self.pts, shape, out=self.pts)

    def _flat_ids(self, slot=None) -> np.ndarray:
        """Flat point index per entry (one slot) or a single key per entry."""
        shape = self.lattice.shape
        if slot is not None:
            q = self.pts[:, slot, :]
            return ((q[:, 0] * shape[1] + q[:, 1]) * shape[2] + q[:, 2]) * shape[3] + q[:, 3]
        key = np.zeros(len(self.vals), dtype=np.int64)
        for s in range(self.degree):
            key = key * self.lattice.size + self._flat_ids(s)
        return key

    def coalesce(self) -> "Kernel":
        """Merge duplicate entry keys (sum of values)."""
        if len(self.vals) == 0:
            return self
        key = self._flat_ids()
        uniq, inv = np.unique(key, return_inverse=True)
        vals = np.zeros(len(uniq), dtype=complex)
        np.add.at(vals, inv, self.vals)
        first = np.zeros(len(uniq), dtype=np.int64)
        first[inv[::-1]] = np.arange(len(key) - 1, -1, -1)
        self.pts = self.pts[first]
        self.vals = vals
        return self

    def add(self, points, value):
        pts = np.array([[self.lattice.wrap(p) for p in points]], dtype=np.int64)
        self.pts = np.concatenate([self.pts, pts], axis=0)
        self.vals = np.concatenate([self.vals, np.array([value], dtype=complex)])

    def items(self):
        for row, v in zip(self.pts, self.vals):
            yield tuple(tuple(int(x) for x in pt) for pt in row), complex(v)

    def to_dict(self) -> dict:
        out: dict = {}
        for k, v in self.items():
            out[k] = out.get(k, 0.0) + v
        return out

    def copy(self) -> "Kernel":
        return Kernel(self.lattice, self.tags, self.pts.copy(), self.vals.copy(),
                      self.translation_invariant)

    # -- evaluation and scaling ------------------------------------------------

    def evaluate(self, fields: list[Field]) -> complex:
        """Contract against one field per slot (derivative slots receive the
        already-differentiated field).  Carries the measure vol^degree."""
        if len(fields) != self.degree:
            raise ValueError("field count does not match kernel degree")
        if len(self.vals) == 0:
            return 0.0 + 0.0j
        acc = self.vals.copy()
        for i, f in enumerate(fields):
            q = self.pts[:, i, :]
            acc = acc * f.values[q[:, 0], q[:, 1], q[:, 2], q[:, 3]]
        return complex(acc.sum() * self.lattice.vol ** self.degree)

    def scaled(self) -> "Kernel":
        """Block-spin scaling: same index entries on the once-finer lattice,
        values multiplied by L^(7/2 p_u + 3/2 p_0 + 5/2 p_sp)."""
        pu, p0, psp = self.ptype
        fac = float(self.lattice.L) ** (3.5 * pu + 1.5 * p0 + 2.5 * psp)
        return Kernel(self.lattice.scaled_finer(), self.tags, self.pts.copy(),
                      fac * self.vals, self.translation_invariant)


# ---------------------------------------------------------------------------
# tree distance and norms
# ---------------------------------------------------------------------------


def _min_image_phys(lat: Lattice, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized physical minimum-image displacement b - a, shape (..., 4)."""
    shape = np.array(lat.shape)
    d = (b - a) % shape
    d = np.where(d > shape // 2, d - shape, d)
    spac = np.array([lat.eps_t, lat.eps_s, lat.eps_s, lat.eps_s])
    return d * spac


def _pair_dist(lat: Lattice, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt((_min_image_phys(lat, a, b) ** 2).sum(axis=-1))


def tree_distance(lat: Lattice, points) -> float:
    """Minimum-spanning-tree length of up to a handful of points under the
    periodic minimum-image metric; 0 for a single point."""
    pts = [np.asarray(p) for p in points]
    n = len(pts)
    if n <= 1:
        return 0.0
    if n == 2:
        return float(_pair_dist(lat, pts[0], pts[1]))
    dist = {(i, k): float(_pair_dist(lat, pts[i], pts[k]))
            for i, k in combinations(range(n), 2)}
    in_tree = {0}
    total = 0.0
    while len(in_tree) < n:
        best = min(
            (dist[(min(i, k), max(i, k))], k)
            for i in in_tree
            for k in range(n)
            if k not in in_tree
        )
        total += best[0]
        in_tree.add(best[1])
    return total


# spanning trees on 4 labeled vertices, as edge triples over the 6 pair slots
_PAIRS4 = list(combinations(range(4), 2))


def _spanning_trees4():
    trees = []
    for t in combinations(range(6), 3):
        parent = list(range(4))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        ok = True
        for e in t:
            a, b = _PAIRS4[e]
            ra, rb = find(a), find(b)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
        if ok:
            trees.append(t)
    return trees


_TREES4 = _spanning_trees4()


def _tau_entries(K: Kernel) -> np.ndarray:
    """MST length per entry, vectorized for degrees 1, 2, 3, 4."""
    p = K.degree
    if p == 1:
        return np.zeros(K.n_entries)
    if p == 2:
        return _pair_dist(K.lattice, K.pts[:, 0], K.pts[:, 1])
    d = {
        (i, k): _pair_dist(K.lattice, K.pts[:, i], K.pts[:, k])
        for i, k in combinations(range(p), 2)
    }
    if p == 3:
        a, b, c = d[(0, 1)], d[(0, 2)], d[(1, 2)]
        return a + b + c - np.maximum(a, np.maximum(b, c))
    edges = np.stack([d[pair] for pair in _PAIRS4], axis=0)  # (6, N)
    sums = np.stack([edges[list(t)].sum(axis=0) for t in _TREES4], axis=0)
    return sums.min(axis=0)


def kernel_norm(K: Kernel, mass: float = 0.0) -> float:
    """l1-linf norm with mass: max over a distinguished argument slot of the
    sup over its point of sum_{other args} |K| e^(mass tau), the summed
    arguments carrying the lattice measure."""
    if mass < 0:
        raise ValueError("mass must be nonnegative")
    if K.n_entries == 0:
        return 0.0
    w = np.abs(K.vals)
    if mass > 0:
        w = w * np.exp(mass * _tau_entries(K))
    vol_rest = K.lattice.vol ** (K.degree - 1)
    best = 0.0
    for i in range(K.degree):
        ids = K._flat_ids(i)
        sums = np.bincount(ids, weights=w, minlength=K.lattice.size)
        best = max(best, sums.max() * vol_rest)
    return float(best)


@dataclass
class ScaleNormReport:
    norm_unscaled: float      # ||M||_mcheck on the coarse lattice
    norm_scaled: float        # ||M^(s)||_m on the fine lattice
    bound: float              # L^5 L^-Delta ||M||_mcheck
    mass_scaled: float
    mass_unscaled: float
    zero_mass_gap: float      # relative gap of the exact m = 0 equality

    @property
    def holds(self) -> bool:
        return self.norm_scaled <= self.bound * (1.0 + 1e-12)


def scale_norm_check(K: Kernel, mass: float, mass_check: float) -> ScaleNormReport:
    """Verify ||M^(s)||_m <= L^5 L^-Delta(p) ||M||_mcheck (equality at zero
    mass).  Requires mass <= L * mass_check."""
    if mass > 0 and mass > K.lattice.L * mass_check:
        raise ValueError("requires mass <= L * mass_check")
    scaled = K.scaled()
    n_b = kernel_norm(K, mass_check)
    n_s = kernel_norm(scaled, mass)
    L5mD = float(K.lattice.L) ** (5.0 - float(delta_dim(K.ptype)))
    b0 = kernel_norm(K, 0.0)
    s0 = kernel_norm(scaled, 0.0)
    gap = abs(s0 - L5mD * b0) / max(L5mD * b0, 1e-300)
    return ScaleNormReport(n_b, n_s, L5mD * n_b, mass, mass_check, gap)


# ---------------------------------------------------------------------------
# helpers for building test kernels
# ---------------------------------------------------------------------------


def _all_points(lat: Lattice) -> np.ndarray:
    return np.indices(lat.shape).reshape(4, -1).T.astype(np.int64)


def identity_bilinear(lat: Lattice) -> Kernel:
    pts = _all_points(lat)
    entries = np.stack([pts, pts], axis=1)
    return Kernel(lat, (TAG_PLAIN, TAG_PLAIN), entries, np.ones(len(pts)),
                  translation_invariant=True)


def translation_invariant_bilinear(lat: Lattice, profile: dict) -> Kernel:
    """K(x, y) = profile[y - x] replicated over all x."""
    base = _all_points(lat)
    blocks = []
    vals = []
    for dlt, v in profile.items():
        shifted = base + np.array(dlt, dtype=np.int64)
        blocks.append(np.stack([base, shifted], axis=1))
        vals.append(np.full(len(base), v, dtype=complex))
    return Kernel(lat, (TAG_PLAIN, TAG_PLAIN), np.concatenate(blocks),
                  np.concatenate(vals), translation_invariant=True).coalesce()


def onsite_quartic(lat: Lattice, strength: float) -> Kernel:
    pts = _all_points(lat)
    entries = np.stack([pts, pts, pts, pts], axis=1)
    return Kernel(lat, (TAG_PLAIN,) * 4, entries,
                  np.full(len(pts), strength, dtype=complex),
                  translation_invariant=True)


def translation_invariant_multilinear(lat: Lattice, tags, profile: dict) -> Kernel:
    """K(x, x+d1, .., x+dp-1) = profile[(d1, .., dp-1)] over all x."""
    base = _all_points(lat)
    blocks = []
    vals = []
    for deltas, v in profile.items():
        slots = [base] + [base + np.array(d, dtype=np.int64) for d in deltas]
        blocks.append(np.stack(slots, axis=1))
        vals.append(np.full(len(base), v, dtype=complex))
    return Kernel(lat, tags, np.concatenate(blocks), np.concatenate(vals),
                  translation_invariant=True).coalesce()


def derivative_fields(psi: Field) -> list[Field]:
    return [forward_derivative(psi, a) for a in AXES]
