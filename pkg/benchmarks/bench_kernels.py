#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-Python reference.

Times the hot operations at pipeline-realistic shapes (a 4000-entry
index scan, classifier forward/backward at fact length 256, a
contrastive batch) and prints per-op timings plus speedups. Verifies
bit-identical outputs before timing each op.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import random
import time
from array import array

from lexjudge.kernels import available_backends


def _vec(rng, n):
    return array("d", (rng.uniform(-1, 1) for _ in range(n)))


def _build_workloads():
    rng = random.Random(0)
    db_n, db_d = 4000, 128          # case-database scan
    seq_l, clf_d, clf_m = 256, 64, 42  # classifier at charge-vocab size
    batch = 32

    index_mat = _vec(rng, db_n * db_d)
    query = _vec(rng, db_d)
    rows = _vec(rng, seq_l * clf_d)
    w = _vec(rng, clf_m * clf_d)
    b = _vec(rng, clf_m)
    probs = array("d", [1.0 / clf_m] * clf_m)
    za = _vec(rng, batch * db_d)
    zb = _vec(rng, batch * db_d)
    table = _vec(rng, 4096 * db_d)
    ids = array("q", (rng.randrange(4096) for _ in range(60)))
    grad = _vec(rng, db_d)

    pooled = None

    def classifier_forward(k):
        p, _ = k.maxpool(rows, seq_l, clf_d)
        logits = k.affine(w, b, p, clf_m, clf_d)
        k.softmax_inplace(logits)
        return logits

    def classifier_backward(k):
        nonlocal pooled
        if pooled is None or len(pooled) != clf_d:
            pooled, _ = k.maxpool(rows, seq_l, clf_d)
        return k.head_backward(probs, 3, pooled, w, clf_m, clf_d)

    return [
        ("index scan (4000x128 cosine)", 20,
         lambda k: k.cosine_scores(query, index_mat, db_n, db_d)),
        ("classifier forward (256 tok)", 200, classifier_forward),
        ("classifier head backward", 500, classifier_backward),
        ("contrastive logits (32x32x128)", 200,
         lambda k: k.pair_scores(za, zb, batch, db_d)),
        ("embed: gather_mean (60 tok)", 2000,
         lambda k: k.gather_mean(table, ids, db_d)),
        ("embed update: scatter_add", 2000,
         lambda k: k.scatter_add(table, ids, grad, db_d, 1e-9) or 0),
    ]


def _time(fn, backend, repeats):
    best = float("inf")
    for _ in range(3):
        start = time.perf_counter()
        for _ in range(repeats):
            fn(backend)
        best = min(best, (time.perf_counter() - start) / repeats)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=float, default=1.0,
                        help="multiplier on per-op repeat counts")
    args = parser.parse_args()

    backends = available_backends()
    if "fast" not in backends:
        print("compiled backend not built (run `python setup.py build_ext "
              "--inplace`); timing reference only")
    ref = backends["reference"]
    fast = backends.get("fast")

    print(f"{'operation':<34}{'reference':>12}{'compiled':>12}{'speedup':>9}")
    for name, repeats, fn in _build_workloads():
        repeats = max(1, int(repeats * args.repeats))
        if fast is not None:
            out_ref, out_fast = fn(ref), fn(fast)
            if isinstance(out_ref, tuple):
                assert all(list(a) == list(b) for a, b in zip(out_ref, out_fast)), name
            elif isinstance(out_ref, array):
                assert out_ref == out_fast, f"{name}: backends disagree"
        t_ref = _time(fn, ref, repeats)
        if fast is None:
            print(f"{name:<34}{t_ref * 1e3:>10.3f}ms{'-':>12}{'-':>9}")
            continue
        t_fast = _time(fn, fast, repeats)
        print(f"{name:<34}{t_ref * 1e3:>10.3f}ms{t_fast * 1e3:>10.3f}ms"
              f"{t_ref / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()
