"""Smoke test for the hsgs_py extension module.

Build first:  pip install --no-build-isolation -e crates/python
Then:         python python/smoke_test.py
"""

import math

import hsgs_py

CONFIG = """
n = 8
n_z = 2
dt = 0.002
t_end = 0.02
seed = 3
[domain]
nx = 8
ny = 8
nz = 8
[noise]
modes = 3
amplitude = 0.1
phi_amplitude = 0.1
"""


def main():
    basis = hsgs_py.Basis(8, 8, 8, 8, 2)
    assert basis.n == 8 and basis.n_z == 2
    eigs = basis.temperature_eigenvalues()
    assert len(eigs) == basis.n_temperature and min(eigs) == 0.0

    u = basis.random_state(seed=1, decay=0.5, l2=2.0)
    assert math.isclose(u.norm_l2(), 2.0, rel_tol=1e-12)
    assert basis.norm(u, 2.0, 2.0) > 0.0
    assert basis.h1(u) > 0.0

    assert hsgs_py.cutoff_theta(0.4, 1.0) == 1.0
    assert hsgs_py.cutoff_theta(1.0, 1.0) == 0.0
    r1, r2 = hsgs_py.log_sobolev_exponents(6.0, 2.0, 3.0)
    assert math.isclose(r1, 132.0) and math.isclose(r2, 44.0)

    sim = hsgs_py.Simulator(CONFIG)
    assert sim.noise_modes == 3 and sim.eta > 0.0
    u0 = sim.initial_state()
    u1, blew_up = sim.step(u0, 0.002, [0.0] * sim.noise_modes)
    assert not blew_up and math.isclose(u1.time, 0.002)

    out = sim.run(u0, path=0)
    ledger = out["ledger"]
    assert not out["stopped"] and out["max_div"] <= 1e-10
    assert ledger["time"][-1] == 0.02

    # same path, same ledger
    again = sim.run(u0, path=0)
    assert again["ledger"]["l2"] == ledger["l2"]

    passed, lines = sim.check("cancellation")
    assert passed, lines

    try:
        hsgs_py.Simulator("dt = -1")
    except ValueError:
        pass
    else:
        raise AssertionError("negative dt accepted")

    print(f"ok: {len(ledger['time'])} ledger rows, final {out['state']!r}")


if __name__ == "__main__":
    main()
