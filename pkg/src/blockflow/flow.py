"""The parabolic flow: chemical-potential recursion driven by the tadpole.

One step sends (mu_n, v_n) to (L^2 mu_n + dmu_n, v_n / L).  The shift
dmu_n solves

    a^2/(a - L^2 mu - dmu) - a^2/(a - L^2 mu) = ell

with a = a_{n+1} and ell the mass coefficient of the fluctuation integral,
modeled as the truncated-Gaussian second moment times the tadpole value

    ell(M_n) = -(2 / (L^3 |X_0^(n+1)|)) (a_{n+1}/(a_{n+1} - L^2 mu_n))^2
               * integral( V_n * T_n(u4, u1) )

where T_n is the propagator combination L^2 S_{n+1} - S_n (n >= 1) or the
covariance C^(0) = L^2 S_1 at the first step.  The reference point of the
recursion is mu*_n = L^2n mu_0 - (2/|X_0^(n)|) integral(V_n^u S_n), whose
n -> infinity limit identifies mu_* as the critical chemical potential to
leading order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import Kernel, WeightSystem, kernel_norm
from .lattice import Hierarchy
from .linops import (
    NumericsError,
    a_seq,
    c0,
    d0_symbol,
    delta_n_symbol,
    green_Sn,
    sn_coset_trace,
    sprime_trace,
    tadpole_combination,
)


class RegimeError(RuntimeError):
    """A proof-regime precondition failed for a strict solver call."""


# ---------------------------------------------------------------------------
# truncated Gaussian fluctuation measure
# ---------------------------------------------------------------------------


def truncated_gaussian_moment(r: float) -> float:
    """Second moment of e^(-|z|^2) restricted to |z| <= r, normalized:
    [1 - (1 + r^2) e^(-r^2)] / [1 - e^(-r^2)].  Tends to 1 as r -> inf and
    satisfies |moment - 1| <= 2 r^2 e^(-r^2) for r >= 1."""
    if r <= 0:
        raise ValueError("radius must be positive")
    r2 = r * r
    em = math.exp(-r2)
    return (1.0 - (1.0 + r2) * em) / (1.0 - em)


def moment_deviation_bound(r: float) -> float:
    return 2.0 * r * r * math.exp(-r * r)


# ---------------------------------------------------------------------------
# the exact dmu equation
# ---------------------------------------------------------------------------


def dmu_equation(dmu: float, ell: float, mu: float, a: float, L: int) -> float:
    """Residual of a^2/(a - L^2 mu - dmu) - a^2/(a - L^2 mu) - ell."""
    d1 = a - L * L * mu - dmu
    d0 = a - L * L * mu
    if d1 == 0.0 or d0 == 0.0:
        raise NumericsError("dmu equation hit a pole")
    return a * a / d1 - a * a / d0 - ell


def solve_dmu(ell: float, mu: float, a: float, L: int,
              enforce_regime: bool = True) -> float:
    """Closed-form root dmu = (a - L^2 mu) - a^2 / (ell + a^2/(a - L^2 mu)).

    In the proof regime (|L^2 mu| <= a/4, |ell| <= 1/18, |dmu| <= 1/8) the
    root is unique in [-1/8, 1/8], has the sign of ell, and satisfies
    |ell|/4 <= |dmu| <= 9|ell|/4; these are asserted there.  With
    enforce_regime=False the closed form is still returned (flow bookkeeping
    outside the proven window), poles excepted."""
    L2mu = L * L * mu
    in_regime = abs(L2mu) <= 0.25 * a and abs(ell) <= 1.0 / 18.0
    if enforce_regime and not in_regime:
        raise RegimeError(
            f"outside the dmu proof regime: |L^2 mu|={abs(L2mu):.4g} vs a/4={a/4:.4g}, "
            f"|ell|={abs(ell):.4g}"
        )
    d0 = a - L2mu
    if d0 == 0.0:
        raise NumericsError("dmu equation hit a pole at dmu = 0")
    if ell == 0.0:
        return 0.0
    denom = ell + a * a / d0
    if denom == 0.0:
        raise NumericsError("dmu closed form hit a pole")
    dmu = d0 - a * a / denom
    resid = dmu_equation(dmu, ell, mu, a, L)
    if abs(resid) > 1e-12 * max(1.0, abs(ell)):
        raise NumericsError(f"dmu residual {resid:.3e} too large")
    if in_regime:
        if abs(dmu) > 0.125 + 1e-15:
            if enforce_regime:
                raise RegimeError(f"|dmu|={abs(dmu):.4g} left [-1/8, 1/8]")
        else:
            if ell != 0.0 and math.copysign(1.0, dmu) != math.copysign(1.0, ell):
                raise NumericsError("dmu sign disagrees with ell")
            if not (0.25 * abs(ell) - 1e-15 <= abs(dmu) <= 2.25 * abs(ell) + 1e-15):
                raise NumericsError("dmu outside [|ell|/4, 9|ell|/4]")
    return dmu


def solve_dmu_bisection(ell: float, mu: float, a: float, L: int,
                        tol: float = 1e-14) -> float:
    """Independent bisection root of the defining equation on [-1/8, 1/8]."""
    lo, hi = -0.125, 0.125
    flo = dmu_equation(lo, ell, mu, a, L)
    fhi = dmu_equation(hi, ell, mu, a, L)
    if flo * fhi > 0:
        raise ValueError("no sign change on [-1/8, 1/8]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = dmu_equation(mid, ell, mu, a, L)
        if abs(fm) < tol or hi - lo < tol:
            return mid
        if flo * fm <= 0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# mu_* and mu*_n
# ---------------------------------------------------------------------------


def d0_inverse_zero_mode_excluded(hier: Hierarchy) -> tuple[np.ndarray, dict]:
    """Column D_0^-1(., 0) on the unit lattice with the k = 0 mode dropped.
    The zero mode is genuinely singular on the periodic box; its exclusion
    is reported, not hidden."""
    unit = hier.unit(0)
    sym = d0_symbol(unit)
    inv = np.zeros_like(sym)
    mask = np.ones(unit.shape, dtype=bool)
    mask[0, 0, 0, 0] = False
    inv[mask] = 1.0 / sym[mask]
    col = np.fft.ifftn(inv)
    report = {
        "zero_mode": "excluded",
        "min_nonzero_symbol": float(np.abs(sym[mask]).min()),
    }
    return col, report


def d0_inverse_regulated(hier: Hierarchy, n_reg: int, a: float = 1.0) -> np.ndarray:
    """Column of (D_0 + a_n L^-2n exp(-Delta_n(L^n k)))^-1: the propagator
    regularization that survives the n -> infinity limit pointwise."""
    unit = hier.unit(0)
    sym = d0_symbol(unit)
    L = float(hier.L)
    an = a_seq(hier.L, n_reg, a)
    th0 = unit.momentum_angles(0).reshape(-1, 1, 1, 1)
    reg_t = 4.0 * L ** (4 * n_reg) * np.sin(th0 / 2.0) ** 2
    reg_s = np.zeros(unit.shape[1:])
    for axis in (1, 2, 3):
        th = unit.momentum_angles(axis)
        shape = [1, 1, 1]
        shape[axis - 1] = len(th)
        reg_s = reg_s + (4.0 * L ** (2 * n_reg) * np.sin(th / 2.0) ** 2).reshape(shape)
    reg = an * L ** (-2 * n_reg) * np.exp(-(reg_t + reg_s[None, :, :, :]))
    return np.fft.ifftn(1.0 / (sym + reg))


def mu_star0(hier: Hierarchy, v0: float, quartic: Kernel | None = None,
             variant: str = "excluded", n_reg: int = 4, a: float = 1.0,
             mass: float = 1.0) -> tuple[float, dict]:
    """mu_* = 2 integral V_0(0, x1, x2, x3) D_0^-1(x3, 0) on the periodic box;
    for the on-site interaction of strength v0/2 this is v0 * D_0^-1(0, 0)."""
    unit = hier.unit(0)
    if variant == "excluded":
        col, report = d0_inverse_zero_mode_excluded(hier)
    elif variant == "regulated":
        col = d0_inverse_regulated(hier, n_reg, a)
        report = {"zero_mode": f"regulated at n={n_reg}"}
    else:
        raise ValueError(f"unknown mu_star variant {variant}")
    report["finite_size_tail"] = math.exp(-mass * unit.extent_s)
    if quartic is None:
        val = v0 * float(col[0, 0, 0, 0].real)
    else:
        # 2/N sum_x V(x1..x4) D^-1(x4 - x1), the propagator leg closing 4 -> 1
        shape = np.array(unit.shape)
        d = (quartic.pts[:, 3, :] - quartic.pts[:, 0, :]) % shape
        vals = quartic.vals * col[d[:, 0], d[:, 1], d[:, 2], d[:, 3]]
        val = float((2.0 / unit.size) * vals.sum().real)
    report["value"] = val
    return val, report


def trace_Sn(hier: Hierarchy, n: int, variant: str = "coset", a: float = 1.0) -> float:
    if variant == "coset":
        return sn_coset_trace(hier, n, 0.0, a)
    if variant == "dense":
        return float(np.trace(green_Sn(hier, n, 0.0, a).mat).real)
    if variant == "sprime":
        return sprime_trace(hier, n, a)
    raise ValueError(f"unknown trace variant {variant}")


def mu_star_n(hier: Hierarchy, n: int, mu0: float, v0: float,
              variant: str = "coset", a: float = 1.0) -> float:
    """mu*_n = L^2n mu_0 - (2/|X_0^(n)|) integral V_n^u(u1..u4) S_n(u4, u1),
    on-site interaction; the trace variant is recorded by the caller."""
    if n < 1:
        raise ValueError("mu*_n defined for n >= 1")
    L = hier.L
    tr = trace_Sn(hier, n, variant, a)
    unit_count = hier.unit(n).size
    return float(L) ** (2 * n) * mu0 - (v0 / float(L) ** n) * tr / unit_count


def tadpole_ell_Mn(hier: Hierarchy, n: int, mu_n: float, v0: float,
                   variant: str = "coset", a: float = 1.0) -> float:
    """Mass coefficient of the tadpole monomial:
    ell(M_n) = -(2/(L^3 |X_0^(n+1)|)) (a_{n+1}/(a_{n+1}-L^2 mu_n))^2
               * (v0/2) L^-n * (L^2 Tr S_{n+1} - Tr S_n),
    the Tr S_n term absent at n = 0 where the combination is C^(0) = L^2 S_1."""
    L = hier.L
    an1 = a_seq(L, n + 1, a)
    denom = an1 - L * L * mu_n
    if denom == 0.0:
        raise NumericsError("tadpole prefactor pole: a_{n+1} = L^2 mu_n")
    pref = (an1 / denom) ** 2
    tr = L * L * trace_Sn(hier, n + 1, variant, a)
    if n >= 1:
        tr -= trace_Sn(hier, n, variant, a)
    unit_count = hier.unit(n + 1).size
    val = -(2.0 / (L**3 * unit_count)) * pref * (0.5 * v0) * float(L) ** (-n) * tr
    return float(val)


def tadpole_ell_M0_via_c0(hier: Hierarchy, mu_0: float, v0: float,
                          a: float = 1.0) -> float:
    """ell(M_0) through the independently assembled C^(0) (dense; small boxes)."""
    L = hier.L
    a1 = a_seq(L, 1, a)
    pref = (a1 / (a1 - L * L * mu_0)) ** 2
    trc = float(np.trace(c0(hier, a).mat).real)
    unit_count = hier.unit(1).size
    return -(2.0 / (L**3 * unit_count)) * pref * (0.5 * v0) * trc


def tadpole_ell_Mn_dense_kernel(hier: Hierarchy, n: int, mu_n: float,
                                quartic: Kernel, a: float = 1.0) -> float:
    """General-kernel tadpole on small boxes: integral V_n T_n(u4, u1) with
    V_n the n-fold scaled input kernel and T_n assembled densely."""
    L = hier.L
    an1 = a_seq(L, n + 1, a)
    pref = (an1 / (an1 - L * L * mu_n)) ** 2
    tn = tadpole_combination(hier, n, a) if n >= 1 else c0(hier, a)
    # integral V_n^u T_n = L^-6n sum_x V_0(x) T_n_ker(L^-n x4, L^-n x1); the
    # index arrays are shared between X_n and X_0, so the kernel lookup is
    # index-wise with T_n_ker = L^5n T_n_mat
    shape = np.array(tn.domain.shape)
    rows = quartic.pts[:, 3, :]
    cols = quartic.pts[:, 0, :]
    ridx = ((rows[:, 0] * shape[1] + rows[:, 1]) * shape[2] + rows[:, 2]) * shape[3] + rows[:, 3]
    cidx = ((cols[:, 0] * shape[1] + cols[:, 1]) * shape[2] + cols[:, 2]) * shape[3] + cols[:, 3]
    contr = (quartic.vals * tn.mat[ridx, cidx]).sum().real
    val = -(2.0 / (L**3 * hier.unit(n + 1).size)) * pref * float(L) ** (-n) * contr
    return float(val)


# ---------------------------------------------------------------------------
# flow configuration and state
# ---------------------------------------------------------------------------


@dataclass
class FlowConfig:
    L: int = 3
    eps: float = 0.05
    v0: float = 1e-3
    L_tp: int = 729
    L_sp: int = 27
    n_max: int = 3
    a: float = 1.0
    mass: float = 1.0
    mu0_mode: str = "well_offset"   # "absolute" or "well_offset"
    mu0_value: float = 2.0          # absolute mu_0, or the offset coefficient c
    interaction: str = "onsite"     # "onsite" (strength v0/2) or "zero"
    mustar_variant: str = "regulated"
    mustar_reg_n: int = 3
    trace_variant: str = "coset"
    budget_constant: float = 1.0
    tail_threshold: float = 1e-6

    def hierarchy(self) -> Hierarchy:
        return Hierarchy(self.L, self.L_tp, self.L_sp)

    def validate(self) -> list[str]:
        """Hard errors raise; soft proof-window violations are returned."""
        warnings = []
        hier = self.hierarchy()  # raises on bad divisibility
        if hier.max_level < self.n_max:
            raise ValueError(
                f"extents support blocking level {hier.max_level}, "
                f"but n_max={self.n_max} steps reach level {self.n_max}"
            )
        if self.mu0_mode not in ("absolute", "well_offset"):
            raise ValueError(f"unknown mu0 mode {self.mu0_mode}")
        tail = math.exp(-self.mass * self.L_sp)
        if tail > self.tail_threshold:
            warnings.append(f"finite-size tail {tail:.3e} above threshold")
        return warnings


@dataclass
class FlowState:
    n: int
    mu: float
    v: float
    mu_star: float
    weights: WeightSystem
    dmu_history: list = field(default_factory=list)


@dataclass
class TrajectoryRow:
    n: int
    mu_n: float
    v_n: float
    mu_star_n: float
    dmu_n: float | None
    dmu_star_n: float | None
    r_n: float
    e_fl_n: float
    abs_mu_minus_mustar: float
    dV_budget: float
    well_ratio: float
    in_regime: bool
    envelope_ok: bool
    moment_factor: float | None
    ell_Mn: float | None
    lemma_b_lhs: float | None
    lemma_b_rhs: float | None


@dataclass
class FlowResult:
    rows: list[TrajectoryRow]
    status: str
    mu_star: float
    mu0: float
    warnings: list[str]
    mustar_report: dict


def mu_gap_window(cfg: FlowConfig, mu0: float, mu_star: float) -> list[str]:
    """The mu_0 admission window mu_* + v0^(4/3-16 eps) <= mu_0 <= v0^(8/9+eps);
    violations are warnings."""
    lo = mu_star + cfg.v0 ** (4.0 / 3.0 - 16.0 * cfg.eps)
    hi = cfg.v0 ** (8.0 / 9.0 + cfg.eps)
    out = []
    if not (lo <= mu0):
        out.append(f"mu0={mu0:.6g} below the window floor {lo:.6g}")
    if not (mu0 <= hi):
        out.append(f"mu0={mu0:.6g} above the window ceiling {hi:.6g}")
    return out


def remark_envelope(cfg: FlowConfig, n: int, mu_n: float, mu0: float,
                    mu_star: float) -> bool:
    """|mu_n| <= 2 L^2n (mu_0 - mu_*) + v0^(1-eps)."""
    bound = 2.0 * cfg.L ** (2 * n) * (mu0 - mu_star) + cfg.v0 ** (1.0 - cfg.eps)
    return abs(mu_n) <= bound + 1e-15


def mu_gap_budget(cfg: FlowConfig, n: int, mu_gap: float) -> float:
    """Budget for |mu_n - mu*_n|: L^2n v0^(1-8eps)
    sum_{l=1}^{n} L^-(2-3eps) l [v0^(1/3-5eps) + L^2l (mu_0 - mu_*)]."""
    if n == 0:
        return 0.0
    v0, eps, L = cfg.v0, cfg.eps, cfg.L
    s = sum(
        L ** (-(2.0 - 3.0 * eps) * l) * (v0 ** (1.0 / 3.0 - 5.0 * eps) + L ** (2 * l) * mu_gap)
        for l in range(1, n + 1)
    )
    return L ** (2 * n) * v0 ** (1.0 - 8.0 * eps) * s


def run_flow(cfg: FlowConfig) -> FlowResult:
    """Iterate the (mu_n, v_n) recursion to n_max, collecting diagnostics.

    Proof-regime exits are flagged per row rather than aborting: the exact
    recursion stays numerically meaningful and the reference runs leave the
    proven window by construction.  Hard numeric failures (poles, nonfinite
    values) terminate with a typed status."""
    warnings = cfg.validate()
    hier = cfg.hierarchy()
    strength = 0.0 if cfg.interaction == "zero" else cfg.v0
    if cfg.interaction == "zero":
        mu_star, ms_report = 0.0, {"zero_mode": "n/a", "value": 0.0}
    else:
        mu_star, ms_report = mu_star0(hier, cfg.v0, variant=cfg.mustar_variant,
                                      n_reg=cfg.mustar_reg_n, a=cfg.a, mass=cfg.mass)
    if cfg.mu0_mode == "absolute":
        mu0 = cfg.mu0_value
    else:
        mu0 = mu_star + cfg.mu0_value * cfg.v0 ** (4.0 / 3.0 - 16.0 * cfg.eps)
    warnings += mu_gap_window(cfg, mu0, mu_star)
    mu_gap = mu0 - mu_star
    if not (0 < mu_gap < 1):
        raise ValueError("flow needs 0 < mu_0 - mu_* < 1 for the weight system")
    ws = WeightSystem(cfg.L, cfg.eps, cfg.v0, mu_gap, cfg.mass)
    warnings += ws.window_violations()
    if cfg.n_max > ws.n_p:
        warnings.append(f"n_max={cfg.n_max} exceeds n_p={ws.n_p:.3f}")

    state = FlowState(0, mu0, cfg.v0, mu0, ws)
    rows: list[TrajectoryRow] = []
    status = "completed"
    for n in range(cfg.n_max + 1):
        base = dict(
            n=n,
            mu_n=state.mu,
            v_n=state.v,
            mu_star_n=state.mu_star,
            r_n=ws.r(n),
            e_fl_n=ws.e_fl(n),
            abs_mu_minus_mustar=abs(state.mu - state.mu_star),
            dV_budget=cfg.budget_constant * ws.e_fl(n) / ws.kappa(n + 1) ** 4,
            well_ratio=state.mu / state.v,
            envelope_ok=remark_envelope(cfg, n, state.mu, mu0, mu_star),
        )
        if n == cfg.n_max:
            rows.append(TrajectoryRow(dmu_n=None, dmu_star_n=None, in_regime=True,
                                      moment_factor=None, ell_Mn=None,
                                      lemma_b_lhs=None, lemma_b_rhs=None, **base))
            break
        try:
            an1 = a_seq(cfg.L, n + 1, cfg.a)
            ell_mn = tadpole_ell_Mn(hier, n, state.mu, strength,
                                    variant=cfg.trace_variant, a=cfg.a)
            moment = truncated_gaussian_moment(ws.r(n))
            ell_fl = moment * ell_mn
            in_regime = (abs(cfg.L**2 * state.mu) <= 0.25 * an1
                         and abs(ell_fl) <= 1.0 / 18.0)
            dmu = solve_dmu(ell_fl, state.mu, an1, cfg.L, enforce_regime=False)
            in_regime = in_regime and abs(dmu) <= 0.125
            mu_next = cfg.L**2 * state.mu + dmu
            mu_star_next = mu_star_n(hier, n + 1, mu0, strength,
                                     variant=cfg.trace_variant, a=cfg.a)
            dmu_star = mu_star_next - cfg.L**2 * state.mu_star
            # |dmu - ell| <= (12 L^2 / a_{n+1}) |dmu| (|mu_n| + |dmu|)
            lhs = abs(dmu - ell_fl)
            rhs = 12.0 * cfg.L**2 / an1 * abs(dmu) * (abs(state.mu) + abs(dmu))
            if in_regime and lhs > rhs + 1e-15:
                raise NumericsError("dmu - ell bound violated inside the regime")
        except (NumericsError, RegimeError) as exc:
            status = f"halted:{exc}"
            rows.append(TrajectoryRow(dmu_n=None, dmu_star_n=None, in_regime=False,
                                      moment_factor=None, ell_Mn=None,
                                      lemma_b_lhs=None, lemma_b_rhs=None, **base))
            break
        rows.append(TrajectoryRow(dmu_n=dmu, dmu_star_n=dmu_star,
                                  in_regime=in_regime, moment_factor=moment,
                                  ell_Mn=ell_mn, lemma_b_lhs=lhs, lemma_b_rhs=rhs,
                                  **base))
        state.dmu_history.append(dmu)
        state = FlowState(n + 1, mu_next, state.v / cfg.L, mu_star_next, ws,
                          state.dmu_history)
        if not np.isfinite(state.mu):
            status = "halted:nonfinite chemical potential"
            break
    return FlowResult(rows, status, mu_star, mu0, warnings, ms_report)


# ---------------------------------------------------------------------------
# the mu*_n limit study
# ---------------------------------------------------------------------------


@dataclass
class LimitStudyRow:
    n: int
    mu_star_n: float
    ratio: float           # |L^2n (mu_0 - mu_*) - mu*_n| / v0
    trace_variant: str


def limit_study(cfg: FlowConfig, n_values=None) -> tuple[list[LimitStudyRow], dict]:
    """Tabulate |L^2n (mu_0 - mu_*) - mu*_n| / v0 for the on-site interaction.

    Bounded with a non-increasing trend while the box dominates the
    blocked-mode artifacts; the exact S_n traces are used throughout."""
    hier = cfg.hierarchy()
    if n_values is None:
        n_values = list(range(1, min(cfg.n_max, hier.max_level) + 1))
    mu_star, report = mu_star0(hier, cfg.v0, variant=cfg.mustar_variant,
                               n_reg=cfg.mustar_reg_n, a=cfg.a, mass=cfg.mass)
    if cfg.mu0_mode == "absolute":
        mu0 = cfg.mu0_value
    else:
        mu0 = mu_star + cfg.mu0_value * cfg.v0 ** (4.0 / 3.0 - 16.0 * cfg.eps)
    rows = []
    for n in n_values:
        ms = mu_star_n(hier, n, mu0, cfg.v0, variant=cfg.trace_variant, a=cfg.a)
        ratio = abs(cfg.L ** (2 * n) * (mu0 - mu_star) - ms) / cfg.v0
        rows.append(LimitStudyRow(n, ms, ratio, cfg.trace_variant))
    return rows, {"mu_star": mu_star, "mu0": mu0, **report}
