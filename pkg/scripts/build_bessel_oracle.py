"""Tabulate J_m(x), Y_m(x) with mpmath at 40 digits for the Bessel tests.

Run once; the table is committed under tests/data and never regenerated from
the package's own Bessel code.
"""

import json
from pathlib import Path

import mpmath as mp
import numpy as np

mp.mp.dps = 40
ORDERS = [0, 1, 2, 3, 4, 5, 7, 10, 13, 17, 20, 25, 30, 40, 50, 60, 75, 90, 100]
ARGS = np.round(np.geomspace(0.1, 200.0, 41), 12).tolist() + [2.404825557695773, 3.831705970207512, 0.8935769662791675]


def main(out: Path) -> None:
    rows = []
    for m in ORDERS:
        for x in ARGS:
            j = mp.besselj(m, x)
            y = mp.bessely(m, x)
            rows.append([m, x, mp.nstr(j, 25), mp.nstr(y, 25)])
    zero = mp.findroot(lambda t: mp.besselj(0, t), 2.4)
    out.write_text(json.dumps({"rows": rows, "j0_first_zero": mp.nstr(zero, 25)}, indent=0) + "\n")


if __name__ == "__main__":
    main(Path(__file__).resolve().parents[1] / "tests" / "data" / "bessel_oracle.json")
