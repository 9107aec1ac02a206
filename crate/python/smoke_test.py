"""Quick check that the compiled extension loads and agrees with numpy/scipy."""

import math
import os
import tempfile

import numpy as np
from scipy.stats import binom

import distrank as dr


def check(cond, msg):
    if not cond:
        raise SystemExit(f"FAIL: {msg}")
    print(f"ok  {msg}")


def main():
    e = dr.divergence("E", 2.0, 1.0)
    check(abs(e - (2 * math.log(2) - 1)) < 1e-15, "E(2||1) = 2 ln 2 - 1")
    kl = dr.divergence("KL", 0.3, 0.6)
    ref = 0.3 * math.log(0.3 / 0.6) + 0.7 * math.log(0.7 / 0.4)
    check(abs(kl - ref) < 1e-15, "Bernoulli KL")

    p_m, q_m = dr.thresholds("lower", 1.0)
    check(abs(dr.divergence("E", 1.0, q_m) - 1.0) < 1e-10 and p_m == 2.0, "lower thresholds at M=1")
    check(0 < dr.ratio("upper", 1e-6) <= 6, "ratio bounded")

    deg, coeffs, err = dr.cheb_exp(20.0, 1e-10)
    check(len(coeffs) == deg + 1 and err <= 1e-10, f"cheb_exp degree {deg}")

    part = dr.Partition(6)
    samples, covered, overlaps = part.verify_tiling(20000, 1)
    check(covered == 1.0 and overlaps == 0, f"tiling with {part.num_blocks} blocks")
    check(part.locate(0.7, 0.2)[0] == "block", "locate off-diagonal point")

    fam = dr.Family.binomial(256)
    rows, cols = fam.shape
    dense = np.array(fam.block(0, rows, 0, cols))
    q = (np.arange(cols) + 0.5) / cols
    ref = binom.pmf(np.arange(rows)[:, None], 256, q[None, :])
    check(np.max(np.abs(dense - ref)) < 1e-13, "binomial entries match scipy")
    check(abs(fam.entry_stirling(128, 128) / fam.entry_exact(128, 128) - 1) < 0.01, "stirling entry")
    check(dr.numerical_rank(dense[:64, 128:].tolist(), 1e-9) <= 12, "numerical_rank of a block")

    ranks = dr.rank_map(fam, 1e-9)
    check(max(r["svd_rank"] for r in ranks) <= 12, "rank map bounded")
    sweep = dr.eps_sweep(fam, [1e-3, 1e-6, 1e-9])
    check([r for _, r in sweep] == sorted(r for _, r in sweep), "eps sweep monotone")

    h = dr.HMatrix.compress(fam, 1e-8)
    x = np.random.default_rng(0).random(cols)
    y = np.array(h.matvec(x.tolist()))
    rel = np.linalg.norm(y - dense @ x) / np.linalg.norm(dense @ x)
    check(rel < 1e-7, f"matvec relative error {rel:.2e}")
    report = h.storage_report()
    check(report["ratio"] < 1.0, f"storage ratio {report['ratio']:.3f}")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.hlrd")
        h.save(path)
        g = dr.HMatrix.load(path)
        check(np.array_equal(np.array(g.to_dense()), np.array(h.to_dense())), "save/load round trip")

    try:
        dr.Partition(2, extent=12.0)
    except ValueError:
        check(True, "non power-of-two extent rejected")
    else:
        check(False, "non power-of-two extent rejected")
    print("smoke test passed")


if __name__ == "__main__":
    main()
