"""Independent reference computation of the 5-node golden discovery trace.

Re-implements selection, freezing, scripted local updates and buffer
averaging in plain Python so the Rust engine can be checked against values
that were not produced by the engine itself. Run once; the output
golden_trace.json is committed and treated as frozen.
"""
import json
import math

NAMES = ["A", "B", "C", "D", "E"]
TRUTH = {("A", "B"), ("A", "C"), ("B", "D"), ("C", "D"), ("D", "E")}
ZERO_SHOT = {
    "A->B": 60, "A->C": -8, "A->D": 25, "A->E": -70,
    "B->A": -12, "B->C": 8, "B->D": 45, "B->E": -30,
    "C->A": -90, "C->B": 15, "C->D": -20, "C->E": 35,
    "D->A": -55, "D->B": 18, "D->C": -40, "D->E": 10,
    "E->A": -95, "E->B": -65, "E->C": 50, "E->D": 22,
}
PARENT_STEP = 30
CHILD_STEP = 15
ROUNDS = 3
PER_ROUND = 3

n = len(NAMES)
pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
truth = {(NAMES.index(a), NAMES.index(b)) for a, b in TRUTH}
conf = {p: float(ZERO_SHOT[f"{NAMES[p[0]]}->{NAMES[p[1]]}"]) for p in pairs}
experimented = set()


def rendered(c):
    # Sign from the label rule (present iff c >= 0), magnitude rounded half away from zero.
    mag = math.floor(abs(c) + 0.5)
    return mag if c >= 0 else -mag


def metrics(conf):
    tp = sum(1 for p in pairs if conf[p] >= 0 and p in truth)
    fp = sum(1 for p in pairs if conf[p] >= 0 and p not in truth)
    fn = sum(1 for p in pairs if conf[p] < 0 and p in truth)
    tn = len(pairs) - tp - fp - fn
    return [tp, fp, fn, tn]


trace = {"snapshots": [[conf[p] for p in pairs]], "metrics": [metrics(conf)], "rounds": []}
for r in range(1, ROUNDS + 1):
    open_pairs = [p for p in pairs if p not in experimented]
    selected = sorted(open_pairs, key=lambda p: (abs(conf[p]), p))[:PER_ROUND]
    start = dict(conf)
    feedback = [(p, p in truth) for p in selected]
    for p, present in feedback:
        experimented.add(p)
        conf[p] = 100.0 if present else -100.0
    buffers = {}
    updates = []
    for (i, j), present in feedback:
        targets = [((i, k), "shares_parent") for k in range(n) if k not in (i, j)]
        targets += [((l, j), "shares_child") for l in range(n) if l not in (i, j)]
        for t, rel in targets:
            if t in experimented or abs(conf[t]) >= 100:
                continue
            step = PARENT_STEP if rel == "shares_parent" else CHILD_STEP
            out = rendered(start[t]) + (step if present else -step)
            out = max(-100, min(100, out))
            value = float(out if out != 0 else 1)
            buffers.setdefault(t, []).append(value)
            updates.append({"experiment": [i, j], "target": list(t), "relation": rel,
                            "prior": start[t], "output": value})
    for t, buf in buffers.items():
        conf[t] = sum(sorted(buf)) / len(buf)
    prev_correct = {p: (start[p] >= 0) == (p in truth) for p in pairs}
    exp_imp = upd_imp = reg = changed = 0
    for p in pairs:
        if (start[p] >= 0) != (conf[p] >= 0):
            changed += 1
            if not prev_correct[p]:
                if p in selected:
                    exp_imp += 1
                else:
                    upd_imp += 1
            else:
                reg += 1
    trace["rounds"].append({
        "selected": [list(p) for p in selected],
        "labels": [1 if present else 0 for _, present in feedback],
        "updates": updates,
        "buffers": {f"{t[0]},{t[1]}": sorted(b) for t, b in sorted(buffers.items())},
        "improvements": [exp_imp, upd_imp, reg, exp_imp + upd_imp - reg, changed],
    })
    trace["snapshots"].append([conf[p] for p in pairs])
    trace["metrics"].append(metrics(conf))

print(json.dumps(trace, indent=1))
