"""The pure-numpy fallback must agree with the compiled kernels.

Both paths run the identical algorithm without fastmath, so results are
compared bitwise, not approximately. The fallback process is spawned with
``ZSLINEAR_NO_NUMBA=1`` because the path is chosen at import time.
"""

import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

PROBE = r"""
import json, sys
import numpy as np
from zslinear._accel import NUMBA_ENABLED
from zslinear.numerics import svd, nuclear_norm
from zslinear.solver import _smo_dimension

rng = np.random.Generator(np.random.Philox(key=77))
out = {"numba": NUMBA_ENABLED, "svd": [], "smo": []}
for _ in range(5):
    a = rng.normal(size=(7, 4))
    res = svd(a)
    out["svd"].append([res.u.tolist(), res.s.tolist(), res.v.tolist()])
x = rng.uniform(-2.0, 2.0, size=(6, 1))
y = rng.uniform(-1.0, 1.0, size=6)
kmat = 1.0 + x @ x.T
alpha, alpha_star, bias, converged = _smo_dimension(kmat, y, 5.0, 0.1, 1e-8, 10000)
out["smo"] = [alpha.tolist(), alpha_star.tolist(), float(bias), bool(converged)]
json.dump(out, sys.stdout)
"""


def run_probe(no_numba: bool) -> dict:
    env = dict(os.environ)
    env["ZSLINEAR_NO_NUMBA"] = "1" if no_numba else "0"
    proc = subprocess.run(
        [sys.executable, "-c", PROBE],
        capture_output=True, text=True, env=env,
        cwd=Path(__file__).resolve().parent.parent,
    )
    assert proc.returncode == 0, proc.stderr
    return json.loads(proc.stdout)


def test_fallback_flag_is_honored():
    assert run_probe(no_numba=True)["numba"] is False


def test_fallback_matches_compiled_bitwise():
    fast = run_probe(no_numba=False)
    slow = run_probe(no_numba=True)
    for a, b in zip(fast["svd"], slow["svd"]):
        for part_a, part_b in zip(a, b):
            assert np.array_equal(np.array(part_a), np.array(part_b))
    assert fast["smo"] == slow["smo"]
