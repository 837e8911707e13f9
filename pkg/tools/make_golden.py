"""Regenerate the oracle golden files.

The HMM table is computed twice with numpy, once by matrix forward-backward
and once by brute force over every one of the 3**17 state paths, and the
two must agree to 1e-8 before anything is written. The DP and branching
tables come from the package oracles (the DP one is checked against its
second implementation).

    python tools/make_golden.py [--skip-brute-force]
"""

import argparse
import itertools
import math
import shutil
import sys
import time
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from probprog import oracles  # noqa: E402

INIT = np.full(3, 1 / 3)
TRANS = np.array([[.1, .5, .4], [.2, .2, .6], [.15, .15, .7]])
MEANS = np.array([-1.0, 1.0, 0.0])
OBS = np.array([.9, .8, .7, 0, -.025, 5, 2, .1, 0, .13, .45, 6, .2, .3, -1, -1])


def emission_table():
    # rows: observation index, columns: state
    return np.exp(-0.5 * (OBS[:, None] - MEANS[None, :]) ** 2) / math.sqrt(2 * math.pi)


def forward_backward():
    E = emission_table()
    n = len(OBS)
    alpha = np.zeros((n + 1, 3))
    alpha[0] = INIT
    for t in range(1, n + 1):
        a = (alpha[t - 1] @ TRANS) * E[t - 1]
        alpha[t] = a / a.sum()
    beta = np.ones((n + 1, 3))
    for t in range(n - 1, -1, -1):
        b = TRANS @ (E[t] * beta[t + 1])
        beta[t] = b / b.sum()
    g = alpha * beta
    return g / g.sum(axis=1, keepdims=True)


def brute_force(head=5):
    """Sum the joint over all 3**17 paths, chunked on the first ``head`` states."""
    n = len(OBS)
    E = emission_table()
    logT, logE = np.log(TRANS), np.log(E)
    tail = n + 1 - head
    # joint log weight of every tail path given the state just before it
    tail_paths = np.array(list(itertools.product(range(3), repeat=tail)), dtype=np.int64)
    marg = np.zeros((n + 1, 3))
    for prefix in itertools.product(range(3), repeat=head):
        lw0 = math.log(INIT[prefix[0]])
        for t in range(1, head):
            lw0 += logT[prefix[t - 1], prefix[t]] + logE[t - 1, prefix[t]]
        lw = np.full(len(tail_paths), lw0)
        prev = np.full(len(tail_paths), prefix[-1])
        for j in range(tail):
            t = head + j
            s = tail_paths[:, j]
            lw += logT[prev, s] + logE[t - 1, s]
            prev = s
        w = np.exp(lw)
        total = w.sum()
        for t in range(head):
            marg[t, prefix[t]] += total
        for j in range(tail):
            marg[head + j] += np.bincount(tail_paths[:, j], weights=w, minlength=3)
    return marg / marg.sum(axis=1, keepdims=True)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--skip-brute-force", action="store_true")
    args = ap.parse_args()

    fb = forward_backward()
    pkg = np.array(oracles.hmm_marginals())
    assert np.max(np.abs(fb - pkg)) < 1e-12, "package forward-backward disagrees"
    if not args.skip_brute_force:
        t0 = time.time()
        bf = brute_force()
        err = np.max(np.abs(fb - bf))
        print(f"brute force over 3^17 paths: max abs diff {err:.3e} ({time.time() - t0:.0f}s)")
        assert err < 1e-8
    trailing = fb[-1] @ TRANS

    rows = [(f"(get-state {i})", float(s), fb[i, s]) for i in range(len(fb)) for s in range(3)]
    rows += [("trailing", float(s), trailing[s]) for s in range(3)]
    out = ROOT / "tests" / "fixtures"
    oracles.write_golden(out / "hmm.csv", rows)

    dp, count = oracles.dp_cluster_count_posterior(return_count=True)
    assert count == 115975
    dp2 = oracles.dp_cluster_count_posterior_recursive()
    assert max(abs(dp[k] - dp2[k]) for k in dp) < 1e-12
    oracles.write_golden(out / "dp-mixture.csv", [("(K)", float(k), p) for k, p in sorted(dp.items())])

    br = oracles.branching_posterior()
    oracles.write_golden(out / "branching.csv", [("r", float(r), p) for r, p in sorted(br.items())])

    dest = ROOT / "src" / "probprog" / "golden"
    dest.mkdir(exist_ok=True)
    for name in ("hmm", "dp-mixture", "branching"):
        shutil.copy(out / f"{name}.csv", dest / f"{name}.csv")
    print("golden files written to", out, "and", dest)


if __name__ == "__main__":
    main()
