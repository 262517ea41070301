"""Smoke test for the `siman` extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml
    pip install --force-reinstall target/wheels/siman-*.whl
"""

import math
import random
import sys

import siman


def check(cond, msg):
    if not cond:
        print(f"FAIL {msg}")
        sys.exit(1)
    print(f"ok   {msg}")


def main():
    rng = random.Random(0)

    for _ in range(50):
        w = [rng.gauss(0.0, 1.0) for _ in range(rng.randint(1, 10))]
        best = siman.brute_force_binarize(w)
        opt = siman.optimal_binarize(w)
        a, b = siman.objective_value(w, opt), siman.objective_value(w, best)
        if abs(a - b) > 1e-12:
            check(False, f"optimal vs exhaustive on {w}")
    check(True, "optimal code matches exhaustive search")

    code = siman.half_half_binarize([5.0, -1.0, 2.0, -4.0])
    check(code.bits == [1, 0, 0, 1] and code.ones == 2, f"half-half code {code!r}")
    check(str(siman.optimal_binarize([3.0, 1.0])) == "10", "optimal code of (3, 1)")
    signs, scale = siman.sign_binarize([2.0, -2.0])
    check(signs == [1, -1] and scale == 2.0, "sign code with scale")

    for x in [-2.0, -0.3, 0.0, 0.43, 1.7]:
        if abs(siman.erfc(x) - math.erfc(x)) > 1.5e-7:
            check(False, f"erfc({x})")
    check(True, "erfc agrees with math.erfc")

    t, p, _ = siman.optimal_threshold("laplace", 2.0)
    check(abs(t - 2.0) < 1e-9 and abs(p - math.exp(-1)) < 1e-9, f"laplace threshold t={t:.4f} p={p:.5f}")
    _, p, _ = siman.optimal_threshold("gauss")
    check(0.535 < p < 0.55, f"gauss plus fraction {p:.4f}")
    w = siman.sample_weights("laplace", 200_000, 3)
    emp = siman.empirical_plus_fraction(w)
    check(abs(emp - math.exp(-1)) < 0.01, f"laplace sample plus fraction {emp:.4f}")

    a = [rng.randint(0, 1) for _ in range(131)]
    b = [rng.randint(0, 1) for _ in range(131)]
    ref = sum((2 * x - 1) * (2 * y - 1) for x, y in zip(a, b))
    va, vb = siman.BitVector(a), siman.BitVector(b)
    check(siman.binary_dot(va, vb) == ref and va.unpack() == a, "binary dot matches float")
    raw, values = siman.binary_matvec([a, b], b, [0.5, 2.0])
    check(raw == [ref, 131] and values == [0.5 * ref, 262.0], "binary matvec")

    try:
        siman.optimal_binarize([0.0, 0.0])
        check(False, "all-zero vector raises")
    except ValueError:
        check(True, "all-zero vector raises ValueError")

    metrics, stats = siman.train_synth(classes=2, dim=12, train=20, test=10, sep=8.0, epochs=2, batch_size=8)
    check(len(metrics) == 2 and len(stats) == 3, "train_synth returns metrics and layer stats")
    check(0.0 <= metrics[-1]["test_acc"] <= 1.0, f"test accuracy {metrics[-1]['test_acc']:.3f}")
    check(metrics == siman.train_synth(classes=2, dim=12, train=20, test=10, sep=8.0, epochs=2, batch_size=8)[0],
          "training is deterministic")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
