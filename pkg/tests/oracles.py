"""Independent reference computations shared by unit and acceptance tests."""
import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation


def _profile(rotvec, A, B, with_scale):
    # translation and scale are linear given R, so they are profiled out
    Ac, Bc = A - A.mean(axis=0), B - B.mean(axis=0)
    RA = Ac @ Rotation.from_rotvec(rotvec).as_matrix().T
    s = max(float(np.sum(RA * Bc)) / float(np.sum(RA * RA)), 0.0) if with_scale else 1.0
    return float(np.sum((s * RA - Bc) ** 2))


def numeric_alignment_residual(A, B, with_scale, rng, starts=3):
    """Minimum of the alignment objective found by derivative-free search over
    the rotation vector from several random starts."""
    best = np.inf
    for i in range(starts):
        x0 = Rotation.random(random_state=int(rng.integers(1 << 31))).as_rotvec() if i else np.zeros(3)
        f = lambda x: _profile(x, A, B, with_scale)
        res = minimize(f, x0, method="Powell", options={"xtol": 1e-10, "ftol": 1e-15, "maxfev": 20000})
        best = min(best, res.fun)
    return best
