#!/usr/bin/env python3
"""Sweep the expansivity/closing verifiers over random orbit pairs and
aggregate pass rates into a JSON-lines report."""

import argparse
import json

import numpy as np

from markovflow import expansivity as ex, psl2, quotient as qt


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--L", type=float, default=3.0)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="expansivity_reports.jsonl")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    G = qt.bolza_group()
    base = qt.reduce_many(G, psl2.random_elements(rng, args.n, scale=0.8))
    reports = []
    for k in range(args.n):
        x = qt.QuotientPoint(psl2.GroupElement(base[k]))
        s = float(rng.uniform(-1, 1)) * args.eps * np.exp(-args.L)
        y = qt.reduce(G, x.rep @ psl2.one_param("B", s))
        reports.append(ex.check_exponential_closing(G, x, y, 0.0,
                                                    args.L, args.eps))
        reports.append(ex.check_eps0(G, x, 0.0, s, args.L,
                                     rho=args.eps, eps=args.eps))
        p = ex.OrbitPair(x, y, L=min(args.L, 2.0), delta=3.0 * args.eps)
        reports.append(ex.check_reparam_bound(G, p, eps=args.eps))
    ex.write_reports(args.out, reports)
    by_check = {}
    for rep in reports:
        ok, tot = by_check.get(rep["check"], (0, 0))
        by_check[rep["check"]] = (ok + bool(rep["passed"]), tot + 1)
    print(json.dumps({k: f"{ok}/{tot}" for k, (ok, tot) in by_check.items()},
                     indent=1))


if __name__ == "__main__":
    main()
