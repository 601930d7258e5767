"""Input validation helpers used by the public API surfaces."""

import numpy as np


def as_float_array(x, name="array", shape=None):
    """Convert to a float64 ndarray, checking finiteness and (optionally) shape."""
    arr = np.asarray(x, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vec2(x, name="vector"):
    return as_float_array(x, name=name, shape=(2,))


def as_points(x, name="points"):
    """Validate an (M, 2) array of planar points. M may be zero."""
    arr = np.asarray(x, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (M, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_symmetric(mat, name="matrix", tol=1e-9):
    mat = as_float_array(mat, name=name)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got shape {mat.shape}")
    if np.max(np.abs(mat - mat.T)) > tol:
        raise ValueError(f"{name} is not symmetric within {tol}")
    return mat


def check_spd(mat, name="matrix", tol=1e-9):
    """Validate a symmetric positive-definite matrix and return it."""
    mat = check_symmetric(mat, name=name, tol=tol)
    eigvals = np.linalg.eigvalsh(mat)
    if eigvals.min() <= 0.0:
        raise ValueError(f"{name} is not positive definite (min eigenvalue {eigvals.min():g})")
    return mat


def as_adjacency(adj, name="adjacency"):
    """Validate a 0/1 symmetric adjacency matrix with a zero diagonal.

    Entries of magnitude 1 count as edges, so adjacency matrices written with
    -1 edge markers are accepted and normalised to 0/1.
    """
    arr = np.asarray(adj, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    arr = np.abs(arr)
    if not np.all(np.isin(arr, (0.0, 1.0))):
        raise ValueError(f"{name} entries must be 0 or +-1")
    if np.any(np.diag(arr) != 0.0):
        raise ValueError(f"{name} must have a zero diagonal")
    if np.max(np.abs(arr - arr.T)) != 0.0:
        raise ValueError(f"{name} must be symmetric")
    return arr.astype(np.int64)
