"""Command-line front end for the partition pipeline.

Subcommands: build (cover -> refine -> subdivide -> classify -> finalize,
writing partition.json), verify (condition and Markov-property suites,
writing verify_report.json), export (adjacency.csv + orbits.csv), plot
(one SVG of label boxes and sampled returns per member).

Configuration comes from an optional JSON file plus flag overrides (flags
win); every output embeds the config hash, seed and tool version, and two
runs with the same config are byte-identical.

Exit codes: 0 success, 1 pipeline error, 2 invalid configuration,
3 verification failure, 4 write failure.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__, builder as bd, expansivity as ex
from . import psl2, quotient as qt, sections as sc
from .psl2 import GroupElement
from .rectangles import LabelSet, Rectangle, s_from_label, label_from_s


@dataclass
class RunConfig:
    group: str = "bolza"
    alpha: float = 0.9
    epsilon: float = 0.09
    d_factor: float = 3.3
    L: float = 4.5
    N: int = 4
    Kmax: int = 50
    tol: float = 1e-9
    samples: int = 10000
    seed: int = 0
    out: str = "out"
    period_max: int = 3
    coverage_target: float = 0.999
    net_points: int = 0            # 0: builder default
    max_sections: int = 20000
    time_budget: float = 0.0       # 0: unlimited
    strict_build: bool = False
    enforce_lambda: bool = False
    orbit_samples: int = 2000
    member_samples: int = 60
    require_containment: bool = False
    plot_max: int = 0              # 0: all members

    @classmethod
    def load(cls, path, overrides):
        data = {}
        if path:
            with open(path) as fh:
                data = json.load(fh)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def validate(self, G):
        if self.alpha <= 0 or self.epsilon <= 0:
            raise ConfigError("alpha and epsilon must be positive")
        if self.tol <= 0:
            raise ConfigError("tolerances must be positive")
        sigma = qt.injectivity_radius(G)
        if 4.0 * self.d_factor * self.epsilon + self.alpha >= sigma:
            raise ConfigError(
                f"section validity fails: 4*{self.d_factor * self.epsilon:.4f}"
                f" + {self.alpha} >= sigma* = {sigma:.4f}")
        if self.N <= self.L / (2.0 * self.alpha):
            raise ConfigError(
                f"N too small: N = {self.N} must exceed L/(2 alpha) = "
                f"{self.L / (2.0 * self.alpha):.3f}")
        return {"alpha_exceeds_schedule": bool(self.alpha >= sigma / 6.0),
                "sigma_star": float(sigma)}

    def hash(self):
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class ConfigError(ValueError):
    pass


def make_group(cfg):
    if cfg.group != "bolza":
        raise ConfigError(f"unknown group spec: {cfg.group!r}")
    return qt.bolza_group()


def _stamp(cfg):
    return {"tool_version": __version__, "config_hash": cfg.hash(),
            "seed": int(cfg.seed), "config": dataclasses.asdict(cfg)}


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v)}")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1, default=_jsonable)
        fh.write("\n")


# ---------------------------------------------------------------------------
# partition (de)serialization
# ---------------------------------------------------------------------------

def partition_payload(cfg, fam, state, M):
    members = []
    for p, R in enumerate(M.members):
        ch = R.chart
        members.append({
            "lift": [[float(v) for v in row] for row in ch.lift.m],
            "u_radius": float(ch.u_radius),
            "s_radius": float(ch.s_radius),
            "kind": ch.kind,
            "plain": [[lo, hi] for lo, hi in R.plain_labels.intervals],
            "primed": [[lo, hi] for lo, hi in R.primed_labels.intervals],
            "shift": float(M.shifts[p]),
            "base_section": int(M.classes[p].member),
        })
    return {
        **_stamp(cfg),
        "pre_family": {
            "lifts": [[[float(v) for v in row] for row in m]
                      for m in fam.lifts],
            "epsilon": float(fam.epsilon),
            "alpha": float(fam.alpha),
            "d_factor": float(fam.d_factor),
            "build_report": fam.build_report,
        },
        "refinement": {"L": state.L, "T": state.T,
                       "lambda": state.lambda_est,
                       "iterations": state.iterations,
                       "converged": bool(state.converged)},
        "itinerary_depth": int(M.itinerary_depth),
        "members": members,
        "adjacency": [[int(v) for v in row] for row in M.adjacency],
        "return_times": {f"{p},{q}": [float(v) for v in vals]
                         for (p, q), vals in sorted(M.return_times.items())},
        "provenance": M.provenance,
    }


def load_partition(path):
    with open(path) as fh:
        data = json.load(fh)
    cfg = RunConfig(**data["config"])
    G = make_group(cfg)
    pf = data["pre_family"]
    fam = bd.PreMarkovFamily(G, np.array(pf["lifts"]), pf["epsilon"],
                             pf["alpha"], pf["d_factor"],
                             pf.get("build_report", {}))
    members, shifts, bases = [], [], []
    for rec in data["members"]:
        lift = GroupElement(np.array(rec["lift"]))
        chart = sc.SectionChart(G, qt.QuotientPoint(lift), lift,
                                rec["u_radius"], rec["s_radius"],
                                rec["kind"], pf["alpha"])
        members.append(Rectangle(chart, LabelSet(rec["plain"]),
                                 LabelSet(rec["primed"])))
        shifts.append(rec["shift"])
        bases.append(rec.get("base_section", -1))
    rtimes = {tuple(int(v) for v in k.split(",")): vals
              for k, vals in data["return_times"].items()}
    classes = [bd.ItineraryClass((), b, m.plain_labels, m.primed_labels,
                                 (0.0, 0.0), 0)
               for b, m in zip(bases, members)]
    M = bd.MarkovPartition(G, members, np.array(shifts),
                           data["itinerary_depth"],
                           np.array(data["adjacency"], dtype=np.int64),
                           rtimes, classes, pf["alpha"],
                           data.get("provenance", {}))
    return data, cfg, fam, M


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_build(cfg):
    G = make_group(cfg)
    notes = cfg.validate(G)
    os.makedirs(cfg.out, exist_ok=True)
    fam = bd.build_pre_markov(
        G, cfg.alpha, cfg.seed, epsilon=cfg.epsilon, d_factor=cfg.d_factor,
        coverage_target=cfg.coverage_target,
        net_points=cfg.net_points or None,
        max_sections=cfg.max_sections,
        time_budget=cfg.time_budget or None,
        strict=cfg.strict_build)
    # restrict to the recurrent core: at partial coverage a few sections
    # never see a sampled return; drop them and re-refine
    for _ in range(6):
        state = bd.refine_C(fam, cfg.L, Kmax=cfg.Kmax, tol=cfg.tol,
                            rng=np.random.default_rng(cfg.seed),
                            enforce_lambda=cfg.enforce_lambda)
        try:
            subdiv = bd.subdivide_E(
                state, samples_per_member=cfg.member_samples,
                rng=np.random.default_rng(cfg.seed + 1))
            break
        except bd.EmptySubdivision as err:
            if not getattr(err, "members", None):
                raise
            fam = bd.PreMarkovFamily(
                G, np.delete(fam.lifts, err.members, axis=0),
                fam.epsilon, fam.alpha, fam.d_factor, fam.build_report)
    else:
        raise bd.EmptySubdivision("no recurrent core after repeated pruning")
    classes, transitions, rtimes = bd.itinerary_classes(
        state, subdiv, cfg.N, n_orbits=cfg.orbit_samples,
        rng=np.random.default_rng(cfg.seed + 2))
    M = bd.finalize_markov(state, subdiv, classes, transitions, rtimes,
                           shifts_seed=cfg.seed)
    payload = partition_payload(cfg, fam, state, M)
    payload["validation_notes"] = notes
    _write_json(os.path.join(cfg.out, "partition.json"), payload)
    print(json.dumps({"status": "ok", "sections": fam.n,
                      "members": len(M.members),
                      "out": os.path.join(cfg.out, "partition.json")},
                     sort_keys=True))
    return 0


def _expansivity_suite(G, cfg):
    rng = np.random.default_rng(cfg.seed + 3)
    sigma = qt.injectivity_radius(G)
    eps = sigma / 20.0
    reports = []
    base = qt.reduce_many(G, psl2.random_elements(rng, 4, scale=0.6))
    for k, L in enumerate((2.0, 4.0)):
        x = qt.QuotientPoint(GroupElement(base[k]))
        s0 = 0.5 * eps * np.exp(-L)
        y = qt.reduce(G, x.rep @ psl2.one_param("B", s0))
        reports.append(ex.check_exponential_closing(G, x, y, 0.0, L, eps))
        reports.append(ex.check_eps0(G, x, 0.0, s0, L, rho=eps, eps=eps))
    z = qt.QuotientPoint(GroupElement(base[2]))
    D2 = sc.make_section(G, qt.reduce(G, z.rep @ psl2.one_param("A", 2.0)),
                         0.05, "CB", alpha=0.3)
    w = qt.reduce(G, z.rep @ psl2.one_param("C", 0.004)
                  @ psl2.one_param("B", 0.003))
    reports.append(ex.check_bracket_transport(G, None, D2, z, w, 2.0))
    return reports


def cmd_verify(cfg, partition_file):
    data, built_cfg, fam, M = load_partition(partition_file)
    G = M.group
    checks = {}
    # adjacency bookkeeping: edges and observed transitions must agree
    edges = {(p, q) for p in range(len(M.members))
             for q in range(len(M.members)) if M.adjacency[p, q]}
    observed = set(M.return_times)
    checks["adjacency_consistency"] = {
        "edges": len(edges),
        "missing_samples": sorted(map(list, edges - observed)),
        "unlisted_transitions": sorted(map(list, observed - edges)),
        "passed": edges == observed and bool(edges),
    }
    pre = bd.validate_pre_markov(fam, samples=cfg.samples,
                                 rng=np.random.default_rng(cfg.seed + 4))
    checks["pre_family"] = pre
    cov_target = built_cfg.coverage_target
    mk = bd.verify_markov(M, samples=cfg.samples,
                          rng=np.random.default_rng(cfg.seed + 5))
    checks["markov_property"] = mk
    exp = _expansivity_suite(G, cfg)
    checks["expansivity"] = {"reports": exp,
                             "passed": all(r["passed"] for r in exp)}
    required = [
        checks["adjacency_consistency"]["passed"],
        pre["a_nesting"]["passed"],
        pre["b_diameter"]["passed"],
        pre["c_flow_disjoint"]["passed"],
        pre["d_coverage"]["fraction"] >= cov_target - 0.005,
        mk["passed"],
        checks["expansivity"]["passed"],
    ]
    if cfg.require_containment:
        required.append(pre["e_containment"]["passed"])
    report = {
        **_stamp(cfg),
        "partition_file": os.path.basename(partition_file),
        "checks": checks,
        "warnings": [] if pre["e_containment"]["passed"] else
        ["containment condition (e) fails at this scale "
         "(stable-coordinate inflation e^{2 alpha}); not gated unless "
         "require_containment"],
        "passed": bool(all(required)),
    }
    os.makedirs(cfg.out, exist_ok=True)
    _write_json(os.path.join(cfg.out, "verify_report.json"), report)
    print(json.dumps({"status": "ok" if report["passed"] else "failed",
                      "passed": report["passed"]}, sort_keys=True))
    return 0 if report["passed"] else 3


def cmd_export(cfg, partition_file):
    _, _, _, M = load_partition(partition_file)
    bundle = bd.export_symbolic(M, period_max=cfg.period_max)
    os.makedirs(cfg.out, exist_ok=True)
    adj_path = os.path.join(cfg.out, "adjacency.csv")
    with open(adj_path, "w") as fh:
        for row in bundle["adjacency"]:
            fh.write(",".join(str(int(v)) for v in row) + "\n")
    orb_path = os.path.join(cfg.out, "orbits.csv")
    with open(orb_path, "w") as fh:
        fh.write("word,symbolic_length,r_sum,group_length,residual\n")
        rows = list(bundle["periodic_words"])
        if bundle["shortest_cycle"]:
            rows.append(bundle["shortest_cycle"])
        for r in rows:
            word = "-".join(str(v) for v in r["word"])
            rsum = r.get("r_sum", r.get("length"))
            vals = [word, str(r["period"]),
                    "" if rsum is None else f"{rsum:.9f}",
                    "" if r.get("group_length") is None
                    else f"{r['group_length']:.9f}",
                    "" if r.get("residual") is None
                    else f"{r['residual']:.3e}"]
            fh.write(",".join(vals) + "\n")
    print(json.dumps({"status": "ok", "adjacency": adj_path,
                      "orbits": orb_path,
                      "shortest": bundle["shortest_cycle"] and
                      bundle["shortest_cycle"]["length"]}, sort_keys=True))
    return 0


def _svg_box(lo_x, hi_x, lo_y, hi_y, sx, sy, color, width, fill="none"):
    return (f'<rect x="{sx(lo_x):.2f}" y="{sy(hi_y):.2f}" '
            f'width="{sx(hi_x) - sx(lo_x):.2f}" '
            f'height="{sy(lo_y) - sy(hi_y):.2f}" '
            f'fill="{fill}" stroke="{color}" stroke-width="{width}"/>')


def cmd_plot(cfg, partition_file):
    _, _, fam, M = load_partition(partition_file)
    P = bd.ProperFamily(M.group, M.members, M.alpha)
    rng = np.random.default_rng(cfg.seed + 6)
    os.makedirs(cfg.out, exist_ok=True)
    count = len(M.members) if not cfg.plot_max else min(cfg.plot_max,
                                                        len(M.members))
    palette = ["#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400",
               "#16a085", "#7f8c8d", "#2c3e50"]
    size = 420
    for p in range(count):
        R = M.members[p]
        r = 1.15 * max(fam.d_radius,
                       max(abs(v) for iv in (R.plain_labels.intervals
                                             + R.primed_labels.intervals)
                           for v in iv))
        sx = lambda v: (v + r) / (2 * r) * (size - 40) + 20
        sy = lambda v: size - ((v + r) / (2 * r) * (size - 40) + 20)
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" '
                 f'width="{size}" height="{size}">',
                 f'<rect width="{size}" height="{size}" fill="white"/>']
        d = fam.d_radius
        parts.append(_svg_box(-d, d, -d, d, sx, sy, "#bbbbbb", 1))
        for lo, hi in R.plain_labels.intervals:
            for lo2, hi2 in R.primed_labels.intervals:
                parts.append(_svg_box(lo, hi, lo2, hi2, sx, sy,
                                      "#222222", 1.5, fill="#eef5ff"))
        pl, pr = R.sample_points(6, rng)
        if len(pl):
            reps = bd.landing_reps(P, np.full(len(pl), p, dtype=np.int64),
                                   pl, s_from_label(pl, pr))
            mi, tt, uu, ss, ok = bd.poincare_map_many(P, reps,
                                                      member_tol=1e-12)
            qq = label_from_s(uu, ss)
            for w in range(len(pl)):
                if not ok[w]:
                    continue
                col = palette[int(mi[w]) % len(palette)]
                parts.append(f'<circle cx="{sx(uu[w]):.2f}" '
                             f'cy="{sy(qq[w]):.2f}" r="3" fill="{col}"/>')
        parts.append(f'<text x="20" y="{size - 6}" font-size="11" '
                     f'fill="#444">member {p} shift {M.shifts[p]:.4g}'
                     f'</text>')
        parts.append("</svg>")
        with open(os.path.join(cfg.out, f"section_{p}.svg"), "w") as fh:
            fh.write("\n".join(parts) + "\n")
    print(json.dumps({"status": "ok", "plots": count}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="markovflow")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None)
    common.add_argument("--group", default=None)
    common.add_argument("--alpha", type=float, default=None)
    common.add_argument("--epsilon", type=float, default=None)
    common.add_argument("--L", type=float, default=None)
    common.add_argument("--N", type=int, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None)
    common.add_argument("--samples", type=int, default=None)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--period-max", dest="period_max", type=int,
                        default=None)
    sub.add_parser("build", parents=[common])
    for name in ("verify", "export", "plot"):
        q = sub.add_parser(name, parents=[common])
        q.add_argument("partition", nargs="?", default=None)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    overrides = {k: getattr(args, k, None)
                 for k in ("group", "alpha", "epsilon", "L", "N", "seed",
                           "out", "samples", "tol", "period_max")}
    try:
        cfg = RunConfig.load(args.config, overrides)
    except (ConfigError, OSError, json.JSONDecodeError, TypeError) as err:
        print(json.dumps({"status": "config_error", "error": str(err)}))
        return 2
    try:
        if args.command == "build":
            return cmd_build(cfg)
        part = args.partition or os.path.join(cfg.out, "partition.json")
        if not os.path.exists(part):
            raise ConfigError(f"partition file not found: {part}")
        if args.command == "verify":
            return cmd_verify(cfg, part)
        if args.command == "export":
            return cmd_export(cfg, part)
        return cmd_plot(cfg, part)
    except ConfigError as err:
        print(json.dumps({"status": "config_error", "error": str(err)}))
        return 2
    except OSError as err:
        print(json.dumps({"status": "io_error", "error": str(err)}))
        return 4
    except (bd.CoverFailure, bd.OffsetExhausted, bd.ScheduleViolation,
            bd.EmptySubdivision, bd.SampleTooSparse, bd.ShiftExhausted,
            bd.ReturnNotFound) as err:
        print(json.dumps({"status": "pipeline_error",
                          "error_type": type(err).__name__,
                          "error": str(err)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
