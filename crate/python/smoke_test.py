"""Loads the compiled extension and exercises the main entry points.

Build first with `cargo build -p cgl-py --features extension-module --release`
(or `pip install --no-build-isolation -e crates/python` when maturin is available).
"""

import glob
import importlib.machinery
import importlib.util
import math
import os
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    try:
        import cglpy

        return cglpy
    except ImportError:
        pass
    libs = sorted(
        glob.glob(os.path.join(ROOT, "target", "*", "libcglpy.so")),
        key=os.path.getmtime,
        reverse=True,
    )
    if not libs:
        sys.exit("libcglpy.so not found; run `cargo build -p cgl-py --features extension-module` first")
    loader = importlib.machinery.ExtensionFileLoader("cglpy", libs[0])
    spec = importlib.util.spec_from_file_location("cglpy", libs[0], loader=loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    return module


def main():
    cgl = load()

    p = cgl.Params()
    report = p.validate()
    assert abs(report["c_q"] - 1 / math.sqrt(3)) < 1e-14, report
    assert report["in_region"]
    assert p.admissible_pair() is not None

    u = cgl.Field.random_smooth([31], [1.0], 4, 1.0, 7)
    res = cgl.check_identities(u, 4.0, 6.0, 1.0)
    assert max(res.values()) < 1e-10, res
    assert u.dphi().inner_product(u.dpsi(4.0)) >= -1e-12

    v = cgl.Field.random_smooth([31], [1.0], 4, 1.0, 8)
    d = (cgl.resolvent_phi(u, 0.5, 1.0) - cgl.resolvent_phi(v, 0.5, 1.0)).norm2()
    assert d <= (u - v).norm2() + 1e-10

    assert cgl.Field.from_bytes(u.to_bytes()).to_bytes() == u.to_bytes()
    final, diag = cgl.solve_cauchy(u, p, 1e-2, mode=[1], amplitude=1.0)
    assert final.shape == [31] and len(diag["times"]) == 101

    sol = cgl.find_periodic("grid.nx = 15\nscheme.tau = 0.01\nforcing.amplitude = 1\n", "direct")
    assert sol["converged"], sol
    print("periodic residual", sol["periodicity_residual"], "equation residual", sol["pde_residual"])

    with tempfile.TemporaryDirectory() as tmp:
        code, summary = cgl.run("verify-params", tmp)
        assert code == 0 and os.path.exists(os.path.join(tmp, "params_report.json"))
        try:
            cgl.run("verify-params", tmp, "params.q = 1.5\n")
        except ValueError as e:
            assert "q must exceed 2" in str(e)
        else:
            raise AssertionError("invalid config accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
