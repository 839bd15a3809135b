import numpy as np


def max_relative_error(analytic, numeric) -> float:
    """Largest absolute discrepancy, relative to the larger gradient's max-norm."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)
