#!/usr/bin/env python3
"""Independent oracle for fixtures/snapshot_small.golden.json.

Re-derives the snapshot construction rules by hand (no shared code with the
C++ builder) for the 10-event fixture: window [T0, T0 + 15 min), half-life
6 h, empty history, vocabularies taken from the events, users-only role block.
Run once; the output is frozen into the repository.
"""
import json
import math
import sys
from collections import defaultdict

T0 = 1704067200000
WINDOW_END = T0 + 15 * 60 * 1000
HALF_LIFE = 6 * 3600 * 1000
KIND_ORDER = {"user": 0, "role": 1, "resource": 2}


def main(fixture, out):
    events = [json.loads(line) for line in open(fixture) if line.strip()]
    roles = sorted({e["role"] for e in events})

    nodes = sorted({("user", e["user"]) for e in events} | {("role", e["role"]) for e in events}
                   | {("resource", e["resource"]) for e in events},
                   key=lambda n: (KIND_ORDER[n[0]], n[1]))
    index = {n: i for i, n in enumerate(nodes)}

    edges = defaultdict(lambda: {"count": 0, "last_seen": 0})
    tally = defaultdict(lambda: {"actions": defaultdict(float), "roles": defaultdict(float),
                                 "count": 0.0, "priv": 0.0})
    for e in events:
        u, r, x = ("user", e["user"]), ("role", e["role"]), ("resource", e["resource"])
        for key in ((index[u], index[r], "assume"), (index[u], index[x], e["action"])):
            edges[key]["count"] += 1
            edges[key]["last_seen"] = max(edges[key]["last_seen"], e["ts"])
        for n in (u, r, x):
            t = tally[n]
            t["actions"][e["action"]] += 1
            t["roles"][e["role"]] += 1
            t["count"] += 1
            t["priv"] += e.get("priv", 0)

    edge_rows = []
    for (s, d, a) in sorted(edges):
        agg = edges[(s, d, a)]
        w = agg["count"] * 2.0 ** (-(WINDOW_END - agg["last_seen"]) / HALF_LIFE)
        edge_rows.append({"src": s, "dst": d, "action": a, "last_seen": agg["last_seen"],
                          "count": agg["count"], "weight": w})

    dim = 3 + len(roles) + 3
    features = []
    for n in nodes:
        t = tally[n]
        row = [0.0] * dim
        row[KIND_ORDER[n[0]]] = 1.0
        if n[0] == "user":
            for role, c in t["roles"].items():
                row[3 + roles.index(role)] = c / t["count"]
        total = sum(t["actions"].values())
        h = 0.0
        for c in t["actions"].values():
            p = c / total
            h -= p * math.log2(p)
        row[3 + len(roles)] = h
        row[4 + len(roles)] = math.log1p(t["count"])
        if n[0] == "user":
            row[5 + len(roles)] = t["priv"] / t["count"] / 4.0
        features.append(row)

    golden = {
        "window_start": T0,
        "window_end": WINDOW_END,
        "feature_dim": dim,
        "role_vocab": roles,
        "nodes": [{"index": i, "kind": k, "name": nm} for i, (k, nm) in enumerate(nodes)],
        "edges": edge_rows,
        "features": features,
    }
    with open(out, "w") as f:
        json.dump(golden, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
