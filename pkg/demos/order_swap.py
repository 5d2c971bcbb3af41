"""Two concentrations with opposite orderings share one DiPerna-Majda measure.

Run with ``python demos/order_swap.py``.
"""

import hashlib

from spacetime_relax import ControlPath, build_order_swap, build_relaxed, integrate, project_dpm


def main():
    rp = build_relaxed(build_order_swap())
    grid = [0.0, 0.5, 0.75, 1.0, 1.5]
    for first, label in ((1.0, "up then down"), (-1.0, "down then up")):
        cp = ControlPath(grid, [1.0, 0.0, 0.0, 1.0], [[0.0], [first], [-first], [0.0]])
        curve = integrate(rp, cp)
        d = project_dpm(cp, curve)
        print(f"{label}: terminal state {curve.final_state.round(4)}, atoms {d.atoms}, "
              f"DPM JSON sha256 {hashlib.sha256(d.to_json().encode()).hexdigest()[:12]}")
    print("the measures agree, the endpoints do not: the ordering inside the jump is lost")


if __name__ == "__main__":
    main()
