"""Smoke test for the zonegp Python bindings.

Build and install first:  pip install maturin && maturin develop -m crates/py/Cargo.toml
(or `pip install --no-build-isolation crates/py`).
"""

import math
import tempfile

import zonegp_py as zg


def main():
    b = zg.Building.seven_room()
    assert b.n_zones == 7, b.n_zones
    print("zones:", b.zone_names())

    sc = zg.Scenario.reference()
    times, conc = zg.simulate(b, sc, 30.0)
    assert len(times) == 31 and len(conc[0]) == 7
    assert all(v == 0.0 for v in conc[18])
    assert conc[25][0] > 0.0

    recs, (dz, dt) = zg.make_observations(b, sc, [1, 2, 3, 4, 5, 6], seed=1)
    assert dz == 1, (dz, dt)
    window = [r for r in recs if dt <= r[1] <= dt + 4]
    assert len(window) == 30

    # exact interpolation of a tiny GP
    pts = [[0.1, 0.2], [0.5, 0.9], [0.8, 0.3], [0.3, 0.6], [0.95, 0.05]]
    out = [[math.sin(3 * x) + y] for x, y in pts]
    gp = zg.GaussianProcess(pts, out)
    mean, c = gp.predict(pts[2])
    assert abs(mean[0] - out[2][0]) < 1e-8 and c < 1e-8, (mean, c)

    # a small campaign: one zone, one source count, two sensors
    emu = zg.Emulators.train(b, zones=[1], source_counts=[2], sensors=[1, 2], n_initial=20, n_added=2)
    assert len(emu) == 2
    err, cmax = emu.interpolation_error()
    assert err <= 1e-8 and cmax <= 1e-8
    with tempfile.TemporaryDirectory() as d:
        emu.save(d)
        back = zg.Emulators.load(d)
        p1 = emu.predict(sc, [1, 2], [19.0, 21.0])
        p2 = back.predict(sc, [1, 2], [19.0, 21.0])
        assert p1 == p2

    try:
        zg.Emulators.load("/nonexistent")
    except FileNotFoundError as e:
        assert "train-emulator" in str(e)
    else:
        raise AssertionError("expected FileNotFoundError")

    # the small campaign covers only a = 2 in zone 1 with sensors 1 and 2
    sensed = [r for r in window if r[0] in (1, 2)]
    post = zg.infer(b, sensed, emulators=emu, samples=1000, burn=500, seed=3)
    print("posterior:", {k: post[k] for k in ("p_sources", "amount_mean", "start_mean", "acceptance_rate")})
    assert abs(sum(post["p_sources"]) - 1.0) < 1e-12
    assert post["p_sources"][1] == 1.0 and post["p_zone"][1] == 1.0, post
    assert 0.0 < post["acceptance_rate"] < 1.0
    print("smoke test passed")


if __name__ == "__main__":
    main()
