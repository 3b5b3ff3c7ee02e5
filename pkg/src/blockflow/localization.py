"""Localization calculus: bond-path expansions and relevant-part extraction.

A nonlocal form is rewritten as a local mass term plus remainders carrying
discrete derivatives by telescoping field differences along bond paths of
the unit lattice.  Paths are axis-ordered staircases with minimum-image
legs; every path satisfies the two rules: no bond repeats (even ignoring
orientation), and every intermediate point z obeys |x-z|, |z-x'| <= |x-x'|.

The lemma-level operations are

  localize_bilinear      P(gamma, psi) = K * int(gamma psi) + sum_nu P_nu(gamma, d_nu psi)
  localize_two_point     mass extraction with real delta-mu and remainders
                         of types (1,1,0), (0,1,1), (0,0,2)
  localize_quartic_deriv quartic with one spatial-derivative slot; the local
                         coefficient vanishes by reflection antisymmetry and
                         the remainder lands in types (2,1,1), (2,0,2)
  project                the linear maps ell, L4, L_D, I on typed polynomials
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import D_REL, D_WATCH, Kernel, TAG_PLAIN, kernel_norm
from .lattice import AXES, Field, Lattice, forward_derivative
from .linops import LinOperator

SPATIAL_AXES = (1, 2, 3)


class SymmetryError(ValueError):
    """Input kernel violates the symmetry a lemma requires."""


# ---------------------------------------------------------------------------
# bond paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bond:
    """Oriented unit-lattice bond.  sign +1 is <z, z+e_axis>, sign -1 is
    <z+e_axis, z>; z is the base point of the undirected bond either way."""

    z: tuple[int, int, int, int]
    axis: int
    sign: int


@dataclass
class BondPath:
    lattice: Lattice
    start: tuple[int, int, int, int]
    end: tuple[int, int, int, int]
    bonds: list[Bond]

    def check_invariants(self):
        lat = self.lattice
        cur = self.start
        seen = set()
        d_total = lat.distance(self.start, self.end)
        for b in self.bonds:
            und = (b.z, b.axis)
            if und in seen:
                raise AssertionError("bond repeated in path")
            seen.add(und)
            step = [0, 0, 0, 0]
            step[b.axis] = b.sign
            nxt = lat.wrap(tuple(cur[a] + step[a] for a in AXES))
            if b.sign > 0:
                if lat.wrap(b.z) != cur:
                    raise AssertionError("forward bond does not start at current point")
            else:
                if lat.wrap(b.z) != nxt:
                    raise AssertionError("backward bond does not end at next point")
            cur = nxt
            if lat.distance(self.start, cur) > d_total + 1e-12 or lat.distance(
                cur, self.end
            ) > d_total + 1e-12:
                raise AssertionError("intermediate point leaves the |x-x'| ball")
        if cur != lat.wrap(self.end):
            raise AssertionError("path does not reach its endpoint")


def _min_image_steps(delta: int, extent: int) -> int:
    d = delta % extent
    if d > extent // 2:
        d -= extent
    return d


def bond_path(lat: Lattice, x, x_end) -> BondPath:
    """Axis-ordered staircase from x to x_end: time leg first, then the
    space axes, each leg along the minimum-image direction."""
    x = lat.wrap(x)
    x_end = lat.wrap(x_end)
    bonds = []
    cur = list(x)
    for a in AXES:
        d = _min_image_steps(x_end[a] - x[a], lat.shape[a])
        step = 1 if d > 0 else -1
        for _ in range(abs(d)):
            nxt = cur.copy()
            nxt[a] += step
            if step > 0:
                bonds.append(Bond(lat.wrap(tuple(cur)), a, +1))
            else:
                bonds.append(Bond(lat.wrap(tuple(nxt)), a, -1))
            cur = nxt
    return BondPath(lat, x, x_end, bonds)


def psi_nabla(bond: Bond, psi_fields: list[Field]) -> complex:
    """Value of the bond field: psi_axis at the tail for a forward bond,
    minus psi_axis at the head for a backward bond.  With psi_nu = d_nu psi
    this equals psi(head) - psi(tail) exactly."""
    if bond.sign not in (+1, -1):
        raise ValueError("malformed bond")
    return bond.sign * complex(psi_fields[bond.axis].values[bond.z])


class _PathCache:
    """Relative staircase paths keyed by displacement; bonds are stored as
    (offset from the anchor, axis, sign)."""

    def __init__(self, lat: Lattice, validate: bool = True):
        self.lat = lat
        self.validate = validate
        self.cache: dict = {}

    def relative(self, delta) -> list[tuple[tuple[int, int, int, int], int, int]]:
        key = tuple(int(d) % s for d, s in zip(delta, self.lat.shape))
        if key in self.cache:
            return self.cache[key]
        origin = (0, 0, 0, 0)
        path = bond_path(self.lat, origin, key)
        if self.validate:
            path.check_invariants()
        rel = [(b.z, b.axis, b.sign) for b in path.bonds]
        self.cache[key] = rel
        return rel


# ---------------------------------------------------------------------------
# operator expansion around block centers
# ---------------------------------------------------------------------------


def nearest_unit_point(fine: Lattice, unit: Lattice, u) -> tuple[int, int, int, int]:
    """The unit-lattice point nearest to the fine point u (no ties: the
    spacing ratios are odd)."""
    out = []
    for a in AXES:
        ratio = round(unit.spacing(a) / fine.spacing(a))
        out.append(round(u[a] / ratio))
    return unit.wrap(tuple(out))


def expand_around_blocks(
    B: LinOperator, mass: float = 0.5, mass_bar: float = 1.0
) -> tuple[list[LinOperator], dict]:
    """Split B(u, x) psi(x) into psi(X(u)) plus derivative terms: returns
    operators B_nu with sum_x B(u,x)[psi(x) - psi(X(u))] = sum_nu B_nu(d_nu psi)(u),
    and a report with the measured norm ratios (the constant is not asserted)."""
    if mass >= mass_bar:
        raise ValueError("requires mass < mass_bar")
    unit, fine = B.domain, B.codomain
    cache = _PathCache(unit)
    mats = [np.zeros_like(B.mat) for _ in AXES]
    unit_pts = list(unit.points())
    for row, u in enumerate(fine.points()):
        anchor = nearest_unit_point(fine, unit, u)
        for col, x in enumerate(unit_pts):
            v = B.mat[row, col]
            if v == 0.0:
                continue
            delta = tuple(x[a] - anchor[a] for a in AXES)
            for off, axis, sign in cache.relative(delta):
                z = unit.index_of(tuple(anchor[a] + off[a] for a in AXES))
                mats[axis][row, z] += sign * v
    ops = [LinOperator(unit, fine, m) for m in mats]
    nb = operator_norm(B, mass_bar)
    ratios = [operator_norm(op, mass) / nb if nb > 0 else 0.0 for op in ops]
    return ops, {"norm_B_massbar": nb, "ratio_per_axis": ratios, "max_ratio": max(ratios)}


def cross_distance(latA: Lattice, ptA, latB: Lattice, ptB) -> float:
    """Minimum-image distance between points of two lattices sharing the
    same physical extents."""
    if not (
        abs(latA.extent_t - latB.extent_t) < 1e-12
        and abs(latA.extent_s - latB.extent_s) < 1e-12
    ):
        raise ValueError("cross-lattice distance needs equal extents")
    tot = 0.0
    for a in AXES:
        ext = latA.extent_t if a == 0 else latA.extent_s
        d = (ptA[a] * latA.spacing(a) - ptB[a] * latB.spacing(a)) % ext
        d = min(d, ext - d)
        tot += d * d
    return math.sqrt(tot)


def operator_norm(op: LinOperator, mass: float = 0.0) -> float:
    """l1-linf norm of the operator kernel with exponential mass weight."""
    ker = np.abs(op.kernel())
    if mass > 0:
        w = np.empty_like(ker)
        for r, u in enumerate(op.codomain.points()):
            for c, x in enumerate(op.domain.points()):
                w[r, c] = math.exp(mass * cross_distance(op.codomain, u, op.domain, x))
        ker = ker * w
    row = (ker * op.domain.vol).sum(axis=1).max()
    col = (ker * op.codomain.vol).sum(axis=0).max()
    return float(max(row, col))


# ---------------------------------------------------------------------------
# kernel-level expansion and symmetrization (vectorized over entries)
# ---------------------------------------------------------------------------


def _encode_delta(K: Kernel, slot: int, anchor_slot: int) -> np.ndarray:
    shape = np.array(K.lattice.shape, dtype=np.int64)
    d = (K.pts[:, slot, :] - K.pts[:, anchor_slot, :]) % shape
    return ((d[:, 0] * shape[1] + d[:, 1]) * shape[2] + d[:, 2]) * shape[3] + d[:, 3]


def expand_kernel_slot(K: Kernel, slot: int, anchor_slot: int, cache: _PathCache):
    """Telescope the field in `slot` around the point in `anchor_slot`:
    K psi(x_slot) = K psi(x_anchor) + path terms carrying d_nu psi.

    Returns (local, {axis: Kernel}) where `local` has the slot point moved
    to the anchor and the axis kernels carry tag 'd<axis>' in that slot."""
    lat = K.lattice
    shape = np.array(lat.shape, dtype=np.int64)
    local_pts = K.pts.copy()
    local_pts[:, slot, :] = K.pts[:, anchor_slot, :]
    local = Kernel(lat, K.tags, local_pts, K.vals.copy(),
                   translation_invariant=K.translation_invariant).coalesce()

    deriv_blocks: dict = {a: ([], []) for a in AXES}
    codes = _encode_delta(K, slot, anchor_slot)
    order = np.argsort(codes, kind="stable")
    codes_sorted = codes[order]
    bounds = np.searchsorted(codes_sorted, np.unique(codes_sorted))
    bounds = np.append(bounds, len(codes_sorted))
    for gi in range(len(bounds) - 1):
        rows = order[bounds[gi]:bounds[gi + 1]]
        code = int(codes_sorted[bounds[gi]])
        d3 = code % lat.shape[3]
        code //= lat.shape[3]
        d2 = code % lat.shape[2]
        code //= lat.shape[2]
        d1 = code % lat.shape[1]
        d0 = code // lat.shape[1]
        for off, axis, sign in cache.relative((d0, d1, d2, d3)):
            pts = K.pts[rows].copy()
            pts[:, slot, :] = (K.pts[rows][:, anchor_slot, :] + np.array(off)) % shape
            deriv_blocks[axis][0].append(pts)
            deriv_blocks[axis][1].append(sign * K.vals[rows])

    deriv = {}
    for a in AXES:
        tags = K.tags[:slot] + (f"d{a}",) + K.tags[slot + 1:]
        blocks, vals = deriv_blocks[a]
        if blocks:
            deriv[a] = Kernel(lat, tags, np.concatenate(blocks),
                              np.concatenate(vals),
                              translation_invariant=K.translation_invariant).coalesce()
        else:
            deriv[a] = Kernel(lat, tags,
                              translation_invariant=K.translation_invariant)
    return local, deriv


def _reflect_pts(lat: Lattice, pts: np.ndarray, signs) -> np.ndarray:
    out = pts.copy()
    for i, a in enumerate(SPATIAL_AXES):
        if signs[i]:
            out[..., a] = (-out[..., a]) % lat.shape[a]
    return out


def _time_reflect_pts(lat: Lattice, pts: np.ndarray) -> np.ndarray:
    out = pts.copy()
    out[..., 0] = (-out[..., 0]) % lat.shape[0]
    return out


def reflect_point(lat: Lattice, pt, signs) -> tuple[int, int, int, int]:
    return tuple(int(x) for x in _reflect_pts(lat, np.array(lat.wrap(pt)), signs))


def time_reflect_point(lat: Lattice, pt) -> tuple[int, int, int, int]:
    return tuple(int(x) for x in _time_reflect_pts(lat, np.array(lat.wrap(pt))))


_PATTERNS = [(s1, s2, s3) for s1 in (0, 1) for s2 in (0, 1) for s3 in (0, 1)]


def _transform_kernel(K: Kernel, signs) -> tuple[np.ndarray, float]:
    """One spatial reflection pattern applied to every entry: plain and d0
    slots reflect; a derivative slot along a flagged axis also shifts back
    one step and flips the overall sign."""
    lat = K.lattice
    pts = _reflect_pts(lat, K.pts, signs)
    sgn = 1.0
    for i, tag in enumerate(K.tags):
        if tag != TAG_PLAIN:
            axis = int(tag[1])
            if axis in SPATIAL_AXES and signs[SPATIAL_AXES.index(axis)]:
                pts[:, i, axis] = (pts[:, i, axis] - 1) % lat.shape[axis]
                sgn = -sgn
    return pts, sgn


def spatial_group_average(K: Kernel) -> Kernel:
    """Average over the 2^3 spatial reflection patterns, with the derivative
    slot sign-and-shift rule; projects onto the reflection-invariant part."""
    blocks, vals = [], []
    for g in _PATTERNS:
        pts, sgn = _transform_kernel(K, g)
        blocks.append(pts)
        vals.append(sgn * K.vals / len(_PATTERNS))
    return Kernel(K.lattice, K.tags, np.concatenate(blocks), np.concatenate(vals),
                  translation_invariant=K.translation_invariant).coalesce()


def symmetrize_bilinear(K: Kernel) -> Kernel:
    """Project a plain bilinear kernel onto the spatially reflection-invariant,
    reality-symmetric part: K(x,y) = K(Rx, Ry) and conj(K(R0 y, R0 x)) = K(x,y)."""
    lat = K.lattice
    blocks, vals = [], []
    for g in _PATTERNS:
        a = _reflect_pts(lat, K.pts[:, 0, :], g)
        b = _reflect_pts(lat, K.pts[:, 1, :], g)
        blocks.append(np.stack([a, b], axis=1))
        vals.append(K.vals / 16.0)
        blocks.append(np.stack([_time_reflect_pts(lat, b), _time_reflect_pts(lat, a)], axis=1))
        vals.append(np.conj(K.vals) / 16.0)
    return Kernel(lat, K.tags, np.concatenate(blocks), np.concatenate(vals),
                  translation_invariant=K.translation_invariant).coalesce()


def _kernel_gap(A: Kernel, B: Kernel) -> float:
    diff = Kernel(A.lattice, A.tags, np.concatenate([A.pts, B.pts]),
                  np.concatenate([A.vals, -B.vals])).coalesce()
    return float(np.abs(diff.vals).max()) if diff.n_entries else 0.0


def check_reality_symmetry(K: Kernel, tol: float = 1e-12):
    lat = K.lattice
    mpts = np.stack([_time_reflect_pts(lat, K.pts[:, 1, :]),
                     _time_reflect_pts(lat, K.pts[:, 0, :])], axis=1)
    mirror = Kernel(lat, K.tags, mpts, np.conj(K.vals))
    scale = max(1.0, float(np.abs(K.vals).max()) if K.n_entries else 0.0)
    if _kernel_gap(K, mirror) > tol * scale:
        raise SymmetryError("kernel violates conj(K(R0 y, R0 x)) = K(x, y)")


def check_spatial_invariance(K: Kernel, tol: float = 1e-12):
    scale = max(1.0, float(np.abs(K.vals).max()) if K.n_entries else 0.0)
    if _kernel_gap(K, spatial_group_average(K)) > tol * scale:
        raise SymmetryError("kernel is not invariant under the spatial reflections")


# ---------------------------------------------------------------------------
# decompositions
# ---------------------------------------------------------------------------

ROLE_STAR = "s"
ROLE_PLAIN = "p"


@dataclass
class Term:
    ptype: tuple[int, int, int]
    kernel: Kernel
    roles: tuple[str, ...]

    def fields_for(self, psi_star: Field, psi: Field) -> list[Field]:
        out = []
        for tag, role in zip(self.kernel.tags, self.roles):
            base = psi_star if role == ROLE_STAR else psi
            out.append(base if tag == TAG_PLAIN else forward_derivative(base, int(tag[1])))
        return out

    def evaluate(self, psi_star: Field, psi: Field) -> complex:
        return self.kernel.evaluate(self.fields_for(psi_star, psi))


@dataclass
class Decomposition:
    """Local coefficient plus typed remainder kernels, with provenance."""

    delta_mu: complex
    terms: list[Term]
    provenance: str
    local_roles: tuple[str, ...] = (ROLE_STAR, ROLE_PLAIN)
    reports: dict = field(default_factory=dict)

    def evaluate(self, psi_star: Field, psi: Field, lat: Lattice) -> complex:
        if len(self.local_roles) == 2:
            local = self.delta_mu * (psi_star.values * psi.values).sum() * lat.vol
        else:  # on-site quartic with one derivative slot
            dpsi = forward_derivative(psi, self.reports["deriv_axis"])
            local = (
                self.delta_mu
                * (psi_star.values * psi.values * psi_star.values * dpsi.values).sum()
                * lat.vol
            )
        return complex(local + sum(t.evaluate(psi_star, psi) for t in self.terms))


def _slot_sums(K: Kernel, slot: int) -> np.ndarray:
    """sum over entries grouped by the point in `slot` (complex)."""
    ids = K._flat_ids(slot)
    out = np.zeros(K.lattice.size, dtype=complex)
    np.add.at(out, ids, K.vals)
    return out


def localize_bilinear(K: Kernel) -> tuple[complex, list[Kernel]]:
    """P(gamma, psi) = K * int(gamma psi) + sum_nu P_nu(gamma, d_nu psi) for a
    translation-invariant bilinear kernel; returns (K, [K_0..K_3])."""
    if not K.translation_invariant:
        raise ValueError("localize_bilinear requires a translation-invariant kernel")
    cache = _PathCache(K.lattice)
    local, deriv = expand_kernel_slot(K, slot=1, anchor_slot=0, cache=cache)
    if not np.all(local.pts[:, 0, :] == local.pts[:, 1, :]):
        raise AssertionError("local part not diagonal")
    diag = _slot_sums(local, 0)
    kappa = diag.sum() / K.lattice.size
    if np.abs(diag - kappa).max() > 1e-10 * max(1.0, abs(kappa)):
        raise ValueError("kernel row sums not constant: not translation invariant")
    return complex(kappa), [deriv[a] for a in AXES]


def localize_two_point(K: Kernel, tol: float = 1e-12) -> Decomposition:
    """Extract the mass term from a reality-symmetric, reflection-invariant
    two-point kernel; the remainders carry one or two derivative slots."""
    if K.tags != (TAG_PLAIN, TAG_PLAIN):
        raise ValueError("two-point localization expects two plain slots")
    check_reality_symmetry(K, tol)
    check_spatial_invariance(K, tol)
    kappa, knu = localize_bilinear(K)
    if abs(kappa.imag) >= 1e-12 * max(1.0, abs(kappa)):
        raise SymmetryError(f"delta-mu not real: imag {kappa.imag:.3e}")
    delta_mu = kappa.real

    terms: list[Term] = []
    averaged = [spatial_group_average(k) for k in knu]
    terms.append(Term((1, 1, 0), averaged[0], (ROLE_STAR, ROLE_PLAIN)))
    cache = _PathCache(K.lattice)
    kappa_resid = 0.0
    for nu in SPATIAL_AXES:
        kn = averaged[nu]
        if kn.n_entries == 0:
            continue
        local, deriv = expand_kernel_slot(kn, slot=0, anchor_slot=1, cache=cache)
        loc_scale = max(1.0, float(np.abs(kn.vals).max()))
        resid = float(np.abs(_slot_sums(local, 1)).max())
        kappa_resid = max(kappa_resid, resid / loc_scale)
        if resid > 1e-12 * loc_scale:
            raise SymmetryError("on-site coefficient of a derivative slot did not cancel")
        for nup in AXES:
            if deriv[nup].n_entries:
                ptype = (0, 1, 1) if nup == 0 else (0, 0, 2)
                terms.append(Term(ptype, deriv[nup], (ROLE_STAR, ROLE_PLAIN)))
    terms = [t for t in terms if t.kernel.n_entries]
    return Decomposition(
        delta_mu,
        terms,
        "two_point",
        reports={"kappa_residual": kappa_resid, "norm_zero_mass": kernel_norm(K, 0.0)},
    )


def antisymmetrize_quartic_deriv(K: Kernel, nu: int) -> Kernel:
    """Project onto the part with K(x1..x4) = -K(R x1, R x2, R x3, R x4 - e_nu),
    R the reflection of axis nu (the symmetry a quartic with one d_nu slot
    inherits from reflection invariance of the action)."""
    lat = K.lattice
    signs = tuple(1 if a == nu else 0 for a in SPATIAL_AXES)
    refl = _reflect_pts(lat, K.pts, signs)
    refl[:, 3, nu] = (refl[:, 3, nu] - 1) % lat.shape[nu]
    return Kernel(lat, K.tags, np.concatenate([K.pts, refl]),
                  np.concatenate([0.5 * K.vals, -0.5 * K.vals]),
                  translation_invariant=K.translation_invariant).coalesce()


def localize_quartic_deriv(K: Kernel, nu: int, tol: float = 1e-12) -> Decomposition:
    """Quartic kernel with slots (psi*, psi, psi*, d_nu psi), nu spatial,
    carrying the reflection antisymmetry: the on-site coefficient vanishes
    and the remainder has types (2,1,1) and (2,0,2), each of degree >= 1 in
    the derivative slot."""
    if nu not in SPATIAL_AXES:
        raise ValueError("nu must be a spatial axis")
    if K.tags != (TAG_PLAIN, TAG_PLAIN, TAG_PLAIN, f"d{nu}"):
        raise ValueError("expected slots (u, u, u, d_nu)")
    if not K.translation_invariant:
        raise ValueError("requires a translation-invariant kernel")
    scale = max(1.0, float(np.abs(K.vals).max()) if K.n_entries else 0.0)
    csum = _slot_sums(K, 3)
    kappa = csum.sum() / K.lattice.size
    if np.abs(csum - kappa).max() > 1e-10 * scale:
        raise ValueError("kernel not translation invariant in the local coefficient")
    if abs(kappa) > tol * scale:
        raise SymmetryError(f"on-site coefficient {abs(kappa):.3e} not cancelled")

    cache = _PathCache(K.lattice)
    terms: list[Term] = []
    roles = (ROLE_STAR, ROLE_PLAIN, ROLE_STAR, ROLE_PLAIN)
    # telescoping psi*(x1) psi(x2) psi*(x3) - psi*(x) psi(x) psi*(x) at x = x4
    work = K
    for slot in (2, 1, 0):
        moved, deriv = expand_kernel_slot(work, slot=slot, anchor_slot=3, cache=cache)
        for nup in AXES:
            t = deriv[nup]
            if t.n_entries:
                p0 = sum(1 for tag in t.tags if tag == "d0")
                psp = sum(1 for tag in t.tags if tag != TAG_PLAIN) - p0
                terms.append(Term((4 - p0 - psp, p0, psp), t, roles))
        work = moved
    onsite = complex(work.vals.sum()) if work.n_entries else 0.0
    return Decomposition(
        complex(kappa),
        terms,
        "quartic_deriv",
        local_roles=roles,
        reports={"deriv_axis": nu, "onsite_total": onsite},
    )


# ---------------------------------------------------------------------------
# the projections ell, L4, L_D, I
# ---------------------------------------------------------------------------


def ell_of_two_point(K: Kernel) -> complex:
    """ell = int dx' K(0, x') for a translation-invariant two-point kernel."""
    at_origin = np.all(K.pts[:, 0, :] == 0, axis=1)
    return complex(K.vals[at_origin].sum() * K.lattice.vol)


def ell_via_constants(K: Kernel) -> complex:
    """ell = F_2(1,1) / int dx: the same number evaluated on constant fields."""
    lat = K.lattice
    return complex(K.vals.sum() * lat.vol**2 / (lat.vol * lat.size))


PARTIAL_ORDER_DOC = "p <= p' iff p0 <= p0', psp <= psp', |p| <= |p'|"


def type_leq(p, q) -> bool:
    return p[1] <= q[1] and p[2] <= q[2] and sum(p) <= sum(q)


@dataclass
class Projection:
    ell: complex
    L4: list[Term]
    LD: list[Term]
    I: list[Term]
    filtration_ok: bool
    reports: dict = field(default_factory=dict)


def project(terms: list[Term], tol: float = 1e-12) -> Projection:
    """Split a typed polynomial (degree <= 6, types in D_rel or irrelevant)
    into the mass coefficient, the quartic part, the watch-list part, and
    the irrelevant part, reconstructing the input exactly."""
    ell = 0.0 + 0.0j
    L4: list[Term] = []
    LD: list[Term] = []
    I: list[Term] = []
    filtration_ok = True
    reports: dict = {"ell_two_ways_gap": 0.0}
    for term in terms:
        p = tuple(term.ptype)
        if p not in D_REL:
            I.append(term)
            continue
        if p in D_WATCH:
            LD.append(term)
        elif p == (4, 0, 0):
            L4.append(term)
        elif p == (2, 0, 0):
            dec = localize_two_point(term.kernel, tol)
            ell_a = ell_of_two_point(term.kernel)
            ell_b = ell_via_constants(term.kernel)
            reports["ell_two_ways_gap"] = max(
                reports["ell_two_ways_gap"], abs(ell_a - ell_b)
            )
            ell += dec.delta_mu
            for t in dec.terms:
                LD.append(t)
                if not type_leq(p, t.ptype):
                    filtration_ok = False
        elif p == (1, 0, 1):
            for t in _localize_one_zero_one(term, tol):
                LD.append(t)
                if not type_leq(p, t.ptype):
                    filtration_ok = False
        elif p == (3, 0, 1):
            axis = next(int(t[1]) for t in term.kernel.tags if t not in (TAG_PLAIN, "d0"))
            dec = localize_quartic_deriv(term.kernel, axis, tol)
            I.extend(dec.terms)
        else:  # unreachable: D_rel is covered above
            raise ValueError(f"unsupported type {p}")
    return Projection(ell, L4, LD, I, filtration_ok, reports)


def _localize_one_zero_one(term: Term, tol: float) -> list[Term]:
    """Type (1,0,1): one plain and one spatial-derivative slot.  The kernel
    is reflection-averaged, its on-site coefficient then vanishes, and the
    plain slot is expanded around the derivative slot's point."""
    K = term.kernel
    if not K.translation_invariant:
        raise ValueError("(1,0,1) localization requires translation invariance")
    check_spatial_invariance(K, max(tol, 1e-12))
    deriv_slot = next(i for i, t in enumerate(K.tags) if t != TAG_PLAIN)
    plain_slot = 1 - deriv_slot
    avg = spatial_group_average(K)
    cache = _PathCache(K.lattice)
    local, deriv = expand_kernel_slot(avg, slot=plain_slot, anchor_slot=deriv_slot,
                                      cache=cache)
    scale = max(1.0, float(np.abs(avg.vals).max()) if avg.n_entries else 0.0)
    resid = float(np.abs(_slot_sums(local, deriv_slot)).max()) if local.n_entries else 0.0
    if resid > max(tol, 1e-12) * scale:
        raise SymmetryError("(1,0,1) on-site coefficient did not cancel")
    out = []
    for nup in AXES:
        t = deriv[nup]
        if t.n_entries:
            p0 = sum(1 for tag in t.tags if tag == "d0")
            out.append(Term((0, p0, 2 - p0), t, term.roles))
    return out
