#!/usr/bin/env python3
"""Smoke test for the nonlocal_pinn_py extension module.

Build the module first:

    cargo build --release -p nonlocal-pinn-py

then run this script from anywhere:

    python3 python/smoke_test.py
"""

import json
import math
import os
import shutil
import sys
import tempfile

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_module():
    candidates = [
        os.path.join(REPO_ROOT, "target", "release", "libnonlocal_pinn_py.so"),
        os.path.join(REPO_ROOT, "target", "debug", "libnonlocal_pinn_py.so"),
    ]
    built = next((c for c in candidates if os.path.exists(c)), None)
    if built is None:
        sys.exit("build the extension first: cargo build --release -p nonlocal-pinn-py")
    stage = tempfile.mkdtemp(prefix="nonlocal_pinn_py_")
    shutil.copy(built, os.path.join(stage, "nonlocal_pinn_py.so"))
    sys.path.insert(0, stage)
    import nonlocal_pinn_py

    return nonlocal_pinn_py


def check(name, ok, detail=""):
    status = "ok" if ok else "FAIL"
    print(f"  [{status}] {name}{(' — ' + detail) if detail else ''}")
    if not ok:
        sys.exit(1)


def main():
    m = import_module()
    print("nonlocal_pinn_py smoke test")

    # registry
    problems = m.list_problems()
    check("registry has 10 problems", len(problems) == 10)
    ids = [p["id"] for p in problems]
    check("registry contains fredholm_1d", "fredholm_1d" in ids)

    # exact solutions / forcing
    check(
        "hypersingular exact u(0.5) = -0.125",
        abs(m.exact_solution("hypersingular_1d", [0.5]) + 0.125) < 1e-14,
    )
    f0 = m.forcing("nonlocal_1d_bounded", [0.0])
    check(
        "nonlocal case-1 forcing at 0",
        abs(f0 - (-2.0 + 1.0 / 1024.0)) < 1e-12,
        f"f(0) = {f0}",
    )

    # network + autodiff
    net = m.Network([2, 16, 16, 1], activation="tanh", seed=3)
    check("parameter count", net.n_params == 2 * 16 + 16 + 16 * 16 + 16 + 16 + 1)
    x = [0.3, -0.4]
    u = net.forward(x)
    g = net.grad(x)
    h = 1e-5
    fd = [
        (net.forward([x[0] + h, x[1]]) - net.forward([x[0] - h, x[1]])) / (2 * h),
        (net.forward([x[0], x[1] + h]) - net.forward([x[0], x[1] - h])) / (2 * h),
    ]
    err = max(abs(a - b) for a, b in zip(g, fd))
    check("gradient matches finite differences", err < 1e-8, f"max err {err:.2e}")

    v = [1 / math.sqrt(2), 1 / math.sqrt(2)]
    d2 = net.second_directional(x, v)
    up = net.forward([x[0] + 1e-4 * v[0], x[1] + 1e-4 * v[1]])
    dn = net.forward([x[0] - 1e-4 * v[0], x[1] - 1e-4 * v[1]])
    fd2 = (up - 2 * u + dn) / 1e-8
    check(
        "second directional matches finite differences",
        abs(d2 - fd2) < 1e-4 * max(1.0, abs(fd2)),
        f"{d2:.6f} vs {fd2:.6f}",
    )

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ckpt.json")
        net.save(path)
        net2 = m.Network.load(path)
        check(
            "checkpoint round-trip is bit-faithful",
            net2.forward(x) == u and net2.dims == net.dims,
        )

    # tiny training run through the config path
    cfg = json.loads(m.default_config("volterra_1d_bounded"))
    cfg["train"]["n_residual_points"] = 64
    cfg["train"]["adam"]["iterations"] = 40
    cfg["train"]["lbfgs"]["iterations"] = 0
    cfg["estimator"]["n_samples"] = 8
    with tempfile.TemporaryDirectory() as d:
        out = m.train(json.dumps(cfg), out_dir=d)
        check(
            "training runs and writes artifacts",
            out["iterations"] == 40
            and os.path.exists(os.path.join(d, "metrics.csv"))
            and os.path.exists(os.path.join(d, "summary.json"))
            and os.path.exists(os.path.join(d, "checkpoint_final.json")),
            f"rel_l2 after 40 iters: {out['final_rel_l2']:.3f}",
        )

    # estimator verification with a small budget
    report = m.verify_estimators(samples=40_000, tol_sigma=4.0, seed=1)
    check(
        "estimator suite passes at reduced budget",
        report["all_pass"],
        f"{len(report['checks'])} checks",
    )

    print("PASS")


if __name__ == "__main__":
    main()
