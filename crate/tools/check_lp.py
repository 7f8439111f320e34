#!/usr/bin/env python3
"""Solve an LP file written by `ambopt solve-batch --export-lp` with HiGHS.

Only the subset of the CPLEX LP format the exporter emits is parsed:
one objective, named constraints, simple bounds and a Binaries section.
Prints the optimal objective value. An optional second argument is a time
limit in seconds.
"""
import re
import sys

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

TERM = re.compile(r"([+-])?\s*(\d+(?:\.\d*)?(?:e[+-]?\d+)?)?\s*([A-Za-z_][\w]*)")


def parse_expr(text):
    terms = []
    for sign, coef, name in TERM.findall(text):
        c = float(coef) if coef else 1.0
        terms.append((name, -c if sign == "-" else c))
    return terms


def main(path, time_limit=None):
    section, stmt = None, ""
    objective, rows, bounds, binaries = [], [], {}, []
    lines = open(path).read().splitlines()
    statements = []
    for line in lines:
        if line.startswith("\\"):
            continue
        head = line.strip()
        if head in ("Minimize", "Subject To", "Bounds", "Binaries", "End"):
            if stmt:
                statements.append((section, stmt))
            section, stmt = head, ""
        elif line.startswith("  ") and stmt:
            stmt += " " + head
        else:
            if stmt:
                statements.append((section, stmt))
            stmt = head
    for section, s in statements:
        if section == "Minimize":
            objective = parse_expr(s.split(":", 1)[1])
        elif section == "Subject To":
            _, body = s.split(":", 1)
            m = re.match(r"(.*?)(<=|>=|=)\s*(\S+)$", body.strip())
            rows.append((parse_expr(m.group(1)), m.group(2), float(m.group(3))))
        elif section == "Bounds":
            parts = s.split()
            if len(parts) == 3 and parts[1] == "=":
                bounds[parts[0]] = (float(parts[2]), float(parts[2]))
            elif len(parts) == 3 and parts[1] == ">=":
                bounds[parts[0]] = (float(parts[2]), np.inf)
            elif len(parts) == 5:
                bounds[parts[2]] = (float(parts[0]), float(parts[4]))
        elif section == "Binaries":
            binaries.extend(s.split())
    names = []
    index = {}

    def var(n):
        if n not in index:
            index[n] = len(names)
            names.append(n)
        return index[n]

    for n, _ in objective:
        var(n)
    for terms, _, _ in rows:
        for n, _ in terms:
            var(n)
    for n in list(bounds) + binaries:
        var(n)
    nv = len(names)
    c = np.zeros(nv)
    for n, a in objective:
        c[index[n]] += a
    A = np.zeros((len(rows), nv))
    lo = np.full(len(rows), -np.inf)
    hi = np.full(len(rows), np.inf)
    for r, (terms, sense, rhs) in enumerate(rows):
        for n, a in terms:
            A[r, index[n]] += a
        if sense in ("<=", "="):
            hi[r] = rhs
        if sense in (">=", "="):
            lo[r] = rhs
    lb = np.zeros(nv)
    ub = np.full(nv, np.inf)
    integrality = np.zeros(nv)
    for n, (l, u) in bounds.items():
        lb[index[n]], ub[index[n]] = l, u
    for n in binaries:
        ub[index[n]] = 1.0
        integrality[index[n]] = 1
    cons = [LinearConstraint(A, lo, hi)] if rows else []
    options = {"mip_rel_gap": 0.0}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = milp(c, constraints=cons, bounds=Bounds(lb, ub), integrality=integrality, options=options)
    if res.x is None:
        sys.exit(f"solver failed: {res.message}")
    if res.success:
        print(repr(res.fun))
    else:
        # Time limit: report incumbent and proven lower bound.
        print(f"incumbent {res.fun!r} bound {res.mip_dual_bound!r} ({res.message})")


if __name__ == "__main__":
    main(sys.argv[1], float(sys.argv[2]) if len(sys.argv) > 2 else None)
