"""Smoke test for the gaussmon_py extension module."""
import math
import os
import tempfile

import gaussmon_py as gm


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    vac = gm.GaussianState.vacuum(1)
    assert close(vac.purity(), 1.0, 1e-12)
    assert close(vac.wigner_entropy(), 1.0 + math.log(math.pi), 1e-9), vac.wigner_entropy()

    th = gm.GaussianState.thermal(1, 4.5)
    assert th.cov == [[5.0, 0.0], [0.0, 5.0]]
    assert th.is_physical()

    try:
        gm.GaussianState([0.0, 0.0], [[0.1, 0.0], [0.0, 0.1]])
    except ValueError:
        pass
    else:
        raise AssertionError("unphysical covariance accepted")

    model = gm.Model.quench()
    ss = model.steady_state()
    assert close(ss[0][0], 50.0, 1e-9) and close(ss[1][1], 50.0, 1e-9)
    assert ss == gm.solve_lyapunov(model.drift, model.diffusion)

    det = gm.Detector.heterodyne()
    assert abs(model.entropy_rate(ss)) < 1e-12
    assert abs(model.entropy_rate(ss, det)) < 1e-12

    ident = [[1.0, 0.0], [0.0, 1.0]]
    assert gm.info_integrated(ident, ident) == 0.0

    sc = gm.Scenario.quench().with_options(t_final=2.0)
    led = sc.compute()
    assert len(led["t"]) == 2001
    for k, pi in enumerate(led["Pi_uc"]):
        assert pi >= -1e-9, (k, pi)
    checks = sc.validate()
    failed = [c for c in checks if not c[3]]
    assert not failed, failed

    with tempfile.TemporaryDirectory() as d:
        assert sc.run(d) == 2001
        assert os.path.exists(os.path.join(d, "ledger.csv"))
        again = gm.Scenario.load(os.path.join(d, "run.json"))
        assert again.compute()["I"] == led["I"]

    try:
        gm.Scenario.parse("[model]\nkind = \"quench\"\n[measurement]\npreset = \"general\"\ns = -1.0\n")
    except ValueError as e:
        assert "s" in str(e)
    else:
        raise AssertionError("negative s accepted")

    print("gaussmon_py", gm.__version__, "smoke test OK:", len(checks), "invariants checked")


if __name__ == "__main__":
    main()
