"""Command-line interface: flow, check, mustar, propagator, localize.

All outputs are byte-deterministic given (config, seed): CSV uses '.'
decimals, LF line endings, and 17 significant digits; JSON is emitted with
sorted keys.  Exit codes: 0 success, 1 check failure, 2 config error,
3 numeric or regime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import checks as ck
from . import flow as fl
from . import linops as lo
from .kernels import Kernel, TAG_PLAIN
from .lattice import Hierarchy, Lattice
from .localization import localize_two_point

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


# key: (types, default, validator)
CONFIG_KEYS = {
    "L": (int, 3, lambda v: v >= 3 and v % 2 == 1),
    "eps": (float, 0.05, lambda v: 0 < v < 0.25),
    "v0": (float, 1e-3, lambda v: 0 < v < 1),
    "L_tp": (int, 729, lambda v: v > 0),
    "L_sp": (int, 27, lambda v: v > 0),
    "n_max": (int, 3, lambda v: v >= 0),
    "a": (float, 1.0, lambda v: v > 0),
    "mass": (float, 1.0, lambda v: v >= 0),
    "mu0_mode": (str, "well_offset", lambda v: v in ("absolute", "well_offset")),
    "mu0_value": (float, 2.0, lambda v: True),
    "mustar_variant": (str, "regulated", lambda v: v in ("excluded", "regulated")),
    "mustar_reg_n": (int, 3, lambda v: v >= 1),
    "trace_variant": (str, "coset", lambda v: v in ("coset", "dense", "sprime")),
    "budget_constant": (float, 1.0, lambda v: v > 0),
    "tail_threshold": (float, 1e-6, lambda v: v > 0),
    "interaction": (str, "onsite", lambda v: v in ("onsite", "zero")),
    "seed": (int, 0, lambda v: v >= 0),
    "q_perturbation": (float, 1.0, lambda v: v > 0),
    "kernel_file": (str, "", lambda v: True),
}


def load_config(path: str | None) -> dict:
    raw = {}
    if path:
        with open(path) as f:
            raw = json.load(f)
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    cfg = {}
    for key, value in raw.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key: {key}")
        want, _, validate = CONFIG_KEYS[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, want) or isinstance(value, bool):
            raise ConfigError(f"config key {key} must be {want.__name__}")
        if not validate(value):
            raise ConfigError(f"config key {key} out of range: {value}")
        cfg[key] = value
    for key, (_, default, _v) in CONFIG_KEYS.items():
        cfg.setdefault(key, default)
    return cfg


def flow_config(cfg: dict) -> fl.FlowConfig:
    return fl.FlowConfig(
        L=cfg["L"], eps=cfg["eps"], v0=cfg["v0"], L_tp=cfg["L_tp"], L_sp=cfg["L_sp"],
        n_max=cfg["n_max"], a=cfg["a"], mass=cfg["mass"], mu0_mode=cfg["mu0_mode"],
        mu0_value=cfg["mu0_value"], interaction=cfg["interaction"],
        mustar_variant=cfg["mustar_variant"],
        mustar_reg_n=cfg["mustar_reg_n"], trace_variant=cfg["trace_variant"],
        budget_constant=cfg["budget_constant"], tail_threshold=cfg["tail_threshold"],
    )


def fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.17g}"


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if not isinstance(v, str) else v for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# kernel files: `i0 i1 i2 i3 | j0 j1 j2 j3 | re im` with a lattice header
# ---------------------------------------------------------------------------


def write_kernel_file(path: Path, K: Kernel) -> None:
    lat = K.lattice
    head = (f"lattice L={lat.L} j={lat.j} n={lat.n} L_tp={lat.L_tp} L_sp={lat.L_sp} "
            f"tags={','.join(K.tags)}")
    lines = [head]
    for pts, v in K.items():
        cells = " | ".join(" ".join(str(c) for c in pt) for pt in pts)
        lines.append(f"{cells} | {fmt(v.real)} {fmt(v.imag)}")
    path.write_text("\n".join(lines) + "\n")


def read_kernel_file(path: Path) -> Kernel:
    lines = path.read_text().strip().split("\n")
    head = lines[0].split()
    if head[0] != "lattice":
        raise ConfigError("kernel file must start with a lattice header")
    fields = dict(kv.split("=") for kv in head[1:])
    lat = Lattice(int(fields["L"]), int(fields["j"]), int(fields["n"]),
                  int(fields["L_tp"]), int(fields["L_sp"]))
    tags = tuple(fields["tags"].split(","))
    pts, vals = [], []
    for line in lines[1:]:
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != len(tags) + 1:
            raise ConfigError(f"kernel line has {len(parts) - 1} points, need {len(tags)}")
        pts.append([[int(c) for c in p.split()] for p in parts[:-1]])
        re, im = (float(c) for c in parts[-1].split())
        vals.append(complex(re, im))
    return Kernel(lat, tags, np.array(pts, dtype=np.int64), np.array(vals),
                  translation_invariant=True)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

FLOW_COLUMNS = ["n", "mu_n", "v_n", "mu_star_n", "dmu_n", "dmu_star_n", "r_n",
                "e_fl_n", "abs_mu_minus_mustar", "dV_budget", "well_ratio"]


def cmd_flow(cfg: dict, out: Path) -> int:
    fcfg = flow_config(cfg)
    res = fl.run_flow(fcfg)
    rows = []
    for r in res.rows:
        rows.append([r.n, r.mu_n, r.v_n, r.mu_star_n, r.dmu_n, r.dmu_star_n,
                     r.r_n, r.e_fl_n, r.abs_mu_minus_mustar, r.dV_budget,
                     r.well_ratio])
    write_csv(out / "flow.csv", FLOW_COLUMNS, rows)
    summary = {
        "config": cfg,
        "status": res.status,
        "mu_star": res.mu_star,
        "mu0": res.mu0,
        "warnings": res.warnings,
        "mustar_report": res.mustar_report,
        "rows": [
            {
                "n": r.n, "in_regime": r.in_regime, "envelope_ok": r.envelope_ok,
                "moment_factor": r.moment_factor, "ell_Mn": r.ell_Mn,
                "lemma_b_lhs": r.lemma_b_lhs, "lemma_b_rhs": r.lemma_b_rhs,
            }
            for r in res.rows
        ],
    }
    write_json(out / "flow.json", summary)
    if res.status != "completed":
        print(f"flow halted: {res.status}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_check(cfg: dict, out: Path, list_only: bool = False) -> int:
    if list_only:
        for name, _ in ck.ALL_CHECKS:
            print(name)
        return EXIT_OK
    results = ck.run_checks(seed=cfg["seed"], q_perturbation=cfg["q_perturbation"])
    write_json(out / "checks.json", {"checks": results})
    ok = all(r["passed"] for r in results)
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['name']}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_mustar(cfg: dict, out: Path) -> int:
    fcfg = flow_config(cfg)
    hier = fcfg.hierarchy()
    if cfg["interaction"] == "zero":
        mu_star, report = 0.0, {"zero_mode": "n/a", "value": 0.0}
        mu0 = cfg["mu0_value"] if cfg["mu0_mode"] == "absolute" else 0.0
        rows = [[n, fcfg.L ** (2 * n) * mu0, "zero"] for n in range(1, fcfg.n_max + 1)]
    else:
        mu_star, report = fl.mu_star0(hier, fcfg.v0, variant=fcfg.mustar_variant,
                                      n_reg=fcfg.mustar_reg_n, a=fcfg.a,
                                      mass=fcfg.mass)
        mu0 = (cfg["mu0_value"] if cfg["mu0_mode"] == "absolute"
               else mu_star + cfg["mu0_value"] * fcfg.v0 ** (4.0 / 3.0 - 16.0 * fcfg.eps))
        rows = [[n, fl.mu_star_n(hier, n, mu0, fcfg.v0, variant=fcfg.trace_variant,
                                 a=fcfg.a), fcfg.trace_variant]
                for n in range(1, fcfg.n_max + 1)]
    write_csv(out / "mustar.csv", ["n", "mu_star_n", "variant"], rows)
    write_json(out / "mustar.json",
               {"mu_star": mu_star, "mu0": mu0, "report": report, "config": cfg})
    return EXIT_OK


def cmd_propagator(cfg: dict, out: Path) -> int:
    fcfg = flow_config(cfg)
    hier = fcfg.hierarchy()
    unit = hier.unit(0)
    sym = lo.d0_symbol(unit)
    rows = []
    for m, v in np.ndenumerate(sym):
        rows.append([m[0], m[1], m[2], m[3], v.real, v.imag])
    write_csv(out / "d0_symbol.csv", ["m0", "m1", "m2", "m3", "re", "im"], rows)
    sp = lo.green_Sn_prime(hier, 1, fcfg.a)
    rows = []
    for m, v in np.ndenumerate(sp.symbol):
        rows.append([m[0], m[1], m[2], m[3], v.real, v.imag])
    write_csv(out / "sprime1_symbol.csv", ["m0", "m1", "m2", "m3", "re", "im"], rows)
    if hier.fine(1).size <= lo.DENSE_SIZE_LIMIT:
        s1 = lo.green_Sn(hier, 1, 0.0, fcfg.a)
        ker = s1.kernel()
        rows = []
        pts = list(s1.codomain.points())
        for i, u in enumerate(pts):
            for jj, v in enumerate(pts):
                val = ker[i, jj]
                rows.append([*u, *v, float(np.real(val)), float(np.imag(val))])
        write_csv(out / "s1_kernel.csv",
                  ["i0", "i1", "i2", "i3", "j0", "j1", "j2", "j3", "re", "im"], rows)
    return EXIT_OK


def cmd_localize(cfg: dict, out: Path) -> int:
    if not cfg["kernel_file"]:
        raise ConfigError("localize needs config key kernel_file")
    K = read_kernel_file(Path(cfg["kernel_file"]))
    if K.tags != (TAG_PLAIN, TAG_PLAIN):
        raise ConfigError("localize expects a two-point kernel (tags u,u)")
    dec = localize_two_point(K)
    rng = np.random.default_rng(cfg["seed"])
    from .lattice import random_field

    worst = 0.0
    for _ in range(5):
        ps, pp = random_field(K.lattice, rng), random_field(K.lattice, rng)
        orig = K.evaluate([ps, pp])
        worst = max(worst, abs(orig - dec.evaluate(ps, pp, K.lattice)))
    terms = []
    for t in dec.terms:
        entries = [[list(map(int, np.array(p).ravel())) for p in pts] + [v.real, v.imag]
                   for pts, v in t.kernel.items()]
        terms.append({"type": list(t.ptype), "tags": list(t.kernel.tags),
                      "kernel_entries": entries})
    write_json(out / "localize.json",
               {"ell": dec.delta_mu, "terms": terms, "residual": worst,
                "reports": ck._plain(dec.reports)})
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="blockflow",
                                     description="block-spin flow engine")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("flow", "check", "mustar", "propagator", "localize"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--out", default=".")
        p.add_argument("--seed", type=int, default=None)
        if name == "check":
            p.add_argument("--list", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except (ConfigError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg["seed"] = args.seed

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "flow":
            return cmd_flow(cfg, out)
        if args.command == "check":
            return cmd_check(cfg, out, list_only=getattr(args, "list", False))
        if args.command == "mustar":
            return cmd_mustar(cfg, out)
        if args.command == "propagator":
            return cmd_propagator(cfg, out)
        if args.command == "localize":
            return cmd_localize(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (lo.NumericsError, fl.RegimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
