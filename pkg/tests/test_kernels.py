import math
from fractions import Fraction
from itertools import combinations, product

import numpy as np
import pytest

from blockflow.kernels import (
    D_REL,
    D_WATCH,
    Kernel,
    Routing,
    WeightSystem,
    classify,
    delta_dim,
    identity_bilinear,
    is_relevant,
    iter_types,
    kernel_norm,
    onsite_quartic,
    scale_norm_check,
    sdf,
    sdf_case_bound,
    sdf_log_L,
    sdf_sup,
    translation_invariant_bilinear,
    translation_invariant_multilinear,
    tree_distance,
)
from blockflow.lattice import Lattice

RNG = np.random.default_rng(5)
LAT = Lattice(3, 0, 0, 9, 3)


def random_bilinear(lat, rng):
    pts = np.indices(lat.shape).reshape(4, -1).T
    pairs = np.stack([np.repeat(pts, len(pts), axis=0),
                      np.tile(pts, (len(pts), 1))], axis=1)
    vals = rng.standard_normal(len(pairs))
    return Kernel(lat, ("u", "u"), pairs, vals)


# -- power counting ----------------------------------------------------------


def test_delta_dim_values():
    assert delta_dim((2, 0, 0)) == 3
    assert delta_dim((1, 0, 1)) == 4
    assert delta_dim((1, 1, 0)) == 5
    assert delta_dim((0, 1, 1)) == 6
    assert delta_dim((0, 0, 2)) == 5
    assert delta_dim((6, 0, 0)) == 9
    assert isinstance(delta_dim((1, 1, 1)), Fraction)


def test_scaling_relevance_table():
    # L^(5 - Delta) exponents for the watch list
    want = {(1, 1, 0): 0, (0, 1, 1): -1, (0, 0, 2): 0, (6, 0, 0): -4}
    for p, e in want.items():
        assert 5 - delta_dim(p) == e
    # the only strictly scaling-relevant types
    strict = [p for p in iter_types(8) if delta_dim(p) < 5]
    assert set(strict) & set(D_REL) >= {(2, 0, 0), (1, 0, 1)}
    for p in strict:
        if p not in ((2, 0, 0), (1, 0, 1)):
            assert not is_relevant(p) or p in D_REL


def test_classify_routing():
    assert classify((2, 0, 0)).routing is Routing.MASS_TERM
    assert classify((4, 0, 0)).routing is Routing.INTERACTION
    assert classify((3, 0, 1)).routed_types == ((2, 1, 1), (2, 0, 2))
    assert classify((1, 0, 1)).routed_types == ((0, 1, 1), (0, 0, 2))
    for p in D_WATCH:
        assert classify(p).routing is Routing.WATCH_LIST
    assert classify((8, 0, 0)).routing is Routing.IRRELEVANT
    assert classify((2, 2, 2)).routing is Routing.IRRELEVANT


# -- weight system -----------------------------------------------------------


def test_exponent_identity():
    ws = WeightSystem(3, 0.05, 1e-3, 1e-3)
    assert 3 * ws.eta + ws.eta_prime == pytest.approx(3 - 0.05, abs=1e-14)


def test_e_fl_ratio_identity():
    ws = WeightSystem(3, 0.05, 1e-3, 2e-3)
    for n in range(6):
        lhs, rhs = ws.e_fl_ratio_identity(n)
        assert lhs == pytest.approx(rhs, rel=1e-12)
        # the kappa(n+1) version carries the extra factor L^(-2 eta)
        lhs1 = ws.e_fl(n) / ws.kappa(n + 1) ** 2
        assert lhs1 == pytest.approx(rhs * ws.L ** (-2 * ws.eta), rel=1e-12)


def test_window_violation_reporting():
    # eps = 0.05 makes the eta' window empty; must report, not raise
    ws = WeightSystem(3, 0.05, 1e-3, 1e-3)
    assert ws.window_violations()
    # a small eps with t = 1 sits inside both windows
    ws2 = WeightSystem(3, 0.01, 1e-3, (1e-3) ** (1 / 0.95))
    assert not ws2.window_violations()


def test_r_and_kappa_fl():
    ws = WeightSystem(3, 0.05, 1e-3, 1e-3)
    assert ws.kappa_fl(2) == pytest.approx((9 / 1e-3) ** 0.025)
    assert ws.r(1) == pytest.approx(0.25 * ws.kappa_fl(2))


def test_sdf_second_form():
    ws = WeightSystem(7, 0.05, 1e-3, 1e-3)
    for p in [(2, 0, 0), (1, 1, 0), (3, 0, 1), (0, 0, 2)]:
        pu, p0, psp = p
        direct = (
            7.0 ** (-float(delta_dim(p)))
            * 7.0 ** (ws.eta * pu + ws.eta_prime * (p0 + psp))
        )
        assert sdf(p, 1.0, ws) == pytest.approx(direct, rel=1e-12)


def test_sdf_bound_and_case_split():
    eps, C = 0.05, 1.5
    L = int(math.ceil((2 * C**8) ** (1 / eps)))
    if L % 2 == 0:
        L += 1
    bound_log = -5 - math.log(2, L)
    for t in np.linspace(3 * (1 - eps) / 4, 9 / 8 - 3 * eps / 8, 7):
        ws = WeightSystem(L, eps, 1e-3, (1e-3) ** (1 / t))
        sup, arg, lg = sdf_sup(C, ws, 20)
        assert lg <= bound_log + 1e-12
        for p in iter_types(20):
            if p in D_REL:
                continue
            lhs = sdf_log_L(p, 1.0, ws)
            case = sdf_case_bound(p, ws)
            assert lhs <= case + 1e-9
            assert case <= -5 - max(eps, (sum(p) - 8) / 2) + 1e-9


def test_sdf_below_one_all_types():
    eps, C = 0.05, 1.5
    L = int(math.ceil((2 * C**8) ** (1 / eps))) | 1
    ws = WeightSystem(L, eps, 1e-3, 1e-3)
    for p in iter_types(20, even_only=False):
        if p not in D_REL:
            assert sdf_log_L(p, C, ws) < 0


def test_sdf_sup_cap_guard():
    ws = WeightSystem(3, 0.05, 1e-3, 1e-3)
    with pytest.raises(ValueError):
        sdf_sup(1.0, ws, cap=8)


# -- tree distance -----------------------------------------------------------


def brute_force_mst(lat, pts):
    n = len(pts)
    best = math.inf
    dist = {(i, k): lat.distance(pts[i], pts[k]) for i, k in combinations(range(n), 2)}
    for edges in combinations(list(combinations(range(n), 2)), n - 1):
        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        ok, total = True, 0.0
        for a, b in edges:
            ra, rb = find(a), find(b)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
            total += dist[(a, b)]
        if ok:
            best = min(best, total)
    return best


def test_tree_distance_examples():
    assert tree_distance(LAT, [(0, 0, 0, 0)]) == 0.0
    assert tree_distance(LAT, [(0, 0, 0, 0), (0, 1, 0, 0)]) == pytest.approx(1.0)
    pts = [(0, 0, 0, 0), (0, 1, 0, 0), (0, 2, 0, 0)]
    assert tree_distance(LAT, pts) == pytest.approx(2.0)
    assert tree_distance(LAT, pts) == pytest.approx(brute_force_mst(LAT, pts))


def test_tree_distance_matches_brute_force():
    for trial in range(25):
        n = 3 if trial % 2 else 4
        pts = [tuple(int(x) for x in RNG.integers(0, 3, size=4)) for _ in range(n)]
        assert tree_distance(LAT, pts) == pytest.approx(brute_force_mst(LAT, pts))


# -- kernel norms ------------------------------------------------------------


def test_norm_identity_kernel():
    K = identity_bilinear(LAT)
    for m in (0.0, 0.5, 2.0):
        assert kernel_norm(K, m) == pytest.approx(1.0)


def test_norm_nearest_neighbor():
    K = translation_invariant_bilinear(LAT, {(0, 1, 0, 0): 1.0})
    m = 0.37
    assert kernel_norm(K, m) == pytest.approx(math.exp(m))


def test_norm_onsite_quartic():
    K = onsite_quartic(LAT, 0.7)
    assert kernel_norm(K, 1.3) == pytest.approx(0.7)


def test_norm_monotone_in_mass():
    K = translation_invariant_bilinear(
        LAT, {(0, 1, 0, 0): 1.0, (2, 0, 0, 1): 0.5, (0, 0, 0, 0): -0.25})
    masses = [0.0, 0.1, 0.3, 0.8]
    vals = [kernel_norm(K, m) for m in masses]
    assert all(vals[i] <= vals[i + 1] + 1e-15 for i in range(len(vals) - 1))
    # m = 0 is the plain l1-linf norm
    assert vals[0] == pytest.approx(1.75)


# -- scaling -----------------------------------------------------------------


def test_scale_zero_mass_equality_bilinear():
    for seed in range(3):
        K = random_bilinear(LAT, np.random.default_rng(seed))
        rep = scale_norm_check(K, 0.0, 0.0)
        assert rep.zero_mass_gap < 1e-12


def test_scale_quartic_contraction():
    K = onsite_quartic(LAT, 1.0)
    rep = scale_norm_check(K, 0.0, 0.0)
    assert rep.norm_scaled / rep.norm_unscaled == pytest.approx(1 / 3, rel=1e-12)


def test_scale_mass_inequality():
    K = random_bilinear(LAT, np.random.default_rng(1))
    rep = scale_norm_check(K, 0.1, 0.2)
    assert rep.holds
    assert rep.norm_scaled <= rep.bound


def test_scale_precondition():
    K = identity_bilinear(LAT)
    with pytest.raises(ValueError):
        scale_norm_check(K, 1.0, 0.1)  # mass > L * mass_check


def test_kernel_entry_roundtrip():
    K = Kernel(LAT, ("u", "u"))
    K.add(((0, 0, 0, 0), (1, 2, 0, 1)), 2.0 + 1.0j)
    K.add(((0, 0, 0, 0), (1, 2, 0, 1)), 1.0)
    K.coalesce()
    assert K.n_entries == 1
    assert K.to_dict()[((0, 0, 0, 0), (1, 2, 0, 1))] == pytest.approx(3.0 + 1.0j)
    assert K.ptype == (2, 0, 0)


def test_kernel_tags_ptype():
    K = Kernel(LAT, ("u", "d0", "d2", "u"))
    assert K.ptype == (2, 1, 1)
    with pytest.raises(ValueError):
        Kernel(LAT, ("u", "dx"))
