"""Quick check of the hlt_py extension.

Build and run from the workspace root:

    cargo build -p hlt-py --release --features extension-module
    cp target/release/libhlt_py.so crates/python/python/hlt_py.so
    python3 crates/python/python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import hlt_py as h


def main():
    p = h.PauliString("XZI")
    q = h.PauliString("ZII")
    assert not p.commutes(q)
    coeff, r = p.commutator_i(q)
    assert str(r) == "YZI" and abs(abs(coeff) - 2.0) < 1e-12

    ham = h.transverse_ising(4)
    rho = h.gibbs_state(ham)
    evs = rho.eigenvalues()
    assert abs(sum(evs) - 1.0) < 1e-10

    km = h.exact_constraint_matrix(rho)
    assert km.shape == (39 * 4 - 63, 12 * 4 - 9)
    resid = km.apply(ham.coefficients)
    assert max(abs(x) for x in resid) < 1e-9

    plan = h.overlapping_plan(4, 81 * 200)
    data = h.sample(rho, plan, 7)
    again = h.MeasurementDataset.from_text(data.to_text())
    assert again.to_text() == data.to_text()

    exact = h.exact_dataset(rho, plan)
    learned, report = h.learn(exact, 39)
    f = h.fidelity(learned, rho)
    assert f > 1 - 1e-6, f

    noisy, _ = h.learn(data, 20)
    f_noisy = h.fidelity(noisy, rho)
    assert 0.5 < f_noisy <= 1.0 + 1e-12

    qst = h.full_qst(h.sample(rho, h.full_plan(4, 500), 3))
    assert 0.5 < h.fidelity(qst, rho) <= 1.0 + 1e-12

    proj = h.project_physical([[0.9, 0.0], [0.0, 0.1]])
    assert proj.eigenvalues()[0] >= 0.0

    rec = h.run('kind = "qst-sweep"\nn_qubits = 4\nm_grid = [8100]\nseeds = [0, 1]\n')
    assert len(rec["rows"]) == 2

    err = h.reconstruction_error([0.5, 2.0], 1, 1e-3)
    assert math.isclose(err, 1e-3 / 2.0)

    print(f"ok: exact fit fidelity {f:.8f}, 16k-shot fit {f_noisy:.4f}, "
          f"loss {report['loss_value']:.3e}")


if __name__ == "__main__":
    main()
