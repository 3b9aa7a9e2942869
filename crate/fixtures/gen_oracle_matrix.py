"""Regenerate oracle_matrix.toml: 200 random-walk cases with n <= 4."""

import itertools
import random

N_CASES = 200
rng = random.Random(20240611)


def partitions(n):
    """All ways to cut 0..n into contiguous pieces."""
    for cuts in itertools.product([False, True], repeat=n - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        yield list(zip(bounds, bounds[1:]))


def random_g(length):
    k = rng.randrange(4)
    if k == 0:
        return {"kind": "constant", "num": rng.choice([1, 2, 3]), "den": rng.choice([1, 2, 5])}
    if k == 1:
        return {"kind": "clipped_pow2", "clip": rng.choice([-1, 0, 1, 2])}
    if k == 2:
        return {"kind": "step_up", "step": rng.randrange(length)}
    return {"kind": "sum_above", "threshold": rng.choice([-2, -1, 0, 1])}


def random_selection(a, b):
    spans = [(lo, hi) for lo in range(a, b + 1) for hi in range(lo + 2, b + 1)]
    if not spans or rng.random() < 0.2:
        return {"kind": "none"}
    lo, hi = rng.choice(spans)
    return {"kind": "argmax", "lo": lo, "hi": hi}


def fmt(d):
    return "{ " + ", ".join(f"{k} = {v!r}" if not isinstance(v, str) else f'{k} = "{v}"' for k, v in d.items()) + " }"


cases = []
while len(cases) < N_CASES:
    n = rng.choice([2, 3, 3, 4, 4, 4])
    e = sorted(c for c in range(n) if rng.random() < 0.6)
    parts = rng.choice(list(partitions(n)))
    pieces = [(a, b, random_g(b - a), random_selection(a, b)) for a, b in parts]
    cases.append((n, e, pieces))

out = ["# Random-walk cases for the exact second-moment oracle.", "version = 1", ""]
for n, e, pieces in cases:
    out.append("[[cases]]")
    out.append(f"n = {n}")
    out.append(f"e_cells = {e}")
    for a, b, g, sel in pieces:
        out.append("[[cases.pieces]]")
        out.append(f"cells = [{a}, {b}]")
        out.append(f"g = {fmt(g)}")
        out.append(f"selection = {fmt(sel)}")
    out.append("")

with open("oracle_matrix.toml", "w") as f:
    f.write("\n".join(out))
