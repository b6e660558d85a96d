"""Quadratic B-spline smoothing and functional principal components.

Each rate curve is smoothed onto a fixed spline basis by least squares;
the sample covariance of the centered basis coefficients, metricized by
the basis Gram matrix, is eigendecomposed to give orthonormal
eigenfunctions, their variances, and per-district scores.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import eigh

from .errors import EigenFailure, InvalidConfig, RankDeficient

DEFAULT_NUM_BASIS = 12
DEFAULT_ORDER = 3  # quadratic


@dataclass(frozen=True)
class BasisSystem:
    """Clamped B-spline basis with its exact Gram matrix."""

    order: int
    num_basis: int
    knots: np.ndarray
    domain: tuple
    gram: np.ndarray

    @property
    def degree(self) -> int:
        return self.order - 1


@dataclass(frozen=True)
class SmoothedCurve:
    district_id: str
    coefficients: np.ndarray


@dataclass(frozen=True)
class FPCAModel:
    """Mean curve, eigenfunctions, variances and scores in basis coordinates.

    ``eigenfunction_coefficients[p]`` holds the basis coefficients of the
    p-th orthonormal eigenfunction; ``scores[j, p]`` is district j's
    projection onto it.  ``variance_explained`` is each retained
    eigenvalue's share of the total (all-component) variance.
    """

    basis: BasisSystem
    district_ids: tuple
    mean_coefficients: np.ndarray
    eigenfunction_coefficients: np.ndarray
    eigenvalues: np.ndarray
    scores: np.ndarray
    variance_explained: np.ndarray

    @property
    def n_components(self) -> int:
        return self.eigenvalues.size


def build_basis(year_min: float, year_max: float, num_basis: int = DEFAULT_NUM_BASIS,
                order: int = DEFAULT_ORDER) -> BasisSystem:
    """Equally-spaced clamped basis over [year_min, year_max]."""
    if num_basis < order:
        raise InvalidConfig(f"num_basis ({num_basis}) must be >= order ({order})")
    if not year_min < year_max:
        raise InvalidConfig("year_min must be below year_max")
    n_interior = num_basis - order
    grid = np.linspace(year_min, year_max, n_interior + 2)
    knots = np.concatenate([
        np.full(order, year_min), grid[1:-1], np.full(order, year_max)])
    basis = BasisSystem(order, num_basis, knots, (float(year_min), float(year_max)),
                        np.empty((0, 0)))
    gram = _gram_matrix(basis)
    return BasisSystem(order, num_basis, knots, basis.domain, gram)


def evaluate_basis(basis: BasisSystem, points) -> np.ndarray:
    """Design matrix of all basis functions at the given points."""
    x = np.asarray(points, dtype=float)
    lo, hi = basis.domain
    if np.any(x < lo) or np.any(x > hi):
        raise InvalidConfig("evaluation points must lie inside the basis domain")
    # Clamp the right end into the last half-open knot span.
    xin = np.minimum(x, np.nextafter(hi, lo))
    design = BSpline.design_matrix(xin, basis.knots, basis.degree).toarray()
    at_end = x == hi
    if at_end.any():
        end_row = np.zeros(basis.num_basis)
        end_row[-1] = 1.0  # clamped basis: last function is 1 at the right end
        design[at_end] = end_row
    return design


def _gram_matrix(basis: BasisSystem) -> np.ndarray:
    """Exact integrals of basis products by Gauss-Legendre per knot span.

    Three nodes integrate polynomials up to degree five exactly, enough
    for products of quadratics.
    """
    nodes, weights = np.polynomial.legendre.leggauss(3)
    spans = np.unique(basis.knots)
    W = np.zeros((basis.num_basis, basis.num_basis))
    for a, b in zip(spans[:-1], spans[1:]):
        mid, half = (a + b) / 2.0, (b - a) / 2.0
        x = mid + half * nodes
        phi = evaluate_basis(basis, x)
        W += half * (phi.T * weights) @ phi
    return W


def smooth(years, values, basis: BasisSystem, district_id: str = "") -> SmoothedCurve:
    """Least-squares basis coefficients for one curve.

    NaN values mark missing years and are dropped before fitting.
    """
    years = np.asarray(years, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(values)
    years, values = years[keep], values[keep]
    if years.size < basis.num_basis:
        raise RankDeficient(
            f"{district_id or 'curve'}: {years.size} observations cannot identify "
            f"{basis.num_basis} basis coefficients")
    design = evaluate_basis(basis, years)
    coef, _, rank, _ = np.linalg.lstsq(design, values, rcond=None)
    if rank < basis.num_basis:
        raise RankDeficient(
            f"{district_id or 'curve'}: design rank {rank} < {basis.num_basis}")
    return SmoothedCurve(district_id, coef)


def _gram_root(gram: np.ndarray):
    vals, vecs = eigh(gram)
    if np.any(vals <= 0):
        raise EigenFailure("Gram matrix is not positive definite")
    root = (vecs * np.sqrt(vals)) @ vecs.T
    inv_root = (vecs / np.sqrt(vals)) @ vecs.T
    return root, inv_root


def fit(curves, basis: BasisSystem, n_components: int = 4) -> FPCAModel:
    """Functional PCA of smoothed curves.

    Eigen-analyzes ``(1/d) W^(1/2) C'C W^(1/2)`` with C the centered
    coefficient rows and W the Gram matrix, so eigenfunctions are
    orthonormal in the function inner product.  Signs are fixed so each
    eigenfunction has nonnegative integral (first nonzero coefficient
    positive as the fallback).
    """
    curves = list(curves)
    if len(curves) < 2:
        raise InvalidConfig("need at least 2 curves")
    if n_components > basis.num_basis:
        raise InvalidConfig("n_components cannot exceed num_basis")
    C = np.vstack([c.coefficients for c in curves])
    ids = tuple(c.district_id for c in curves)
    d = C.shape[0]
    mean = C.mean(axis=0)
    Cc = C - mean
    root, inv_root = _gram_root(basis.gram)
    G = root @ (Cc.T @ Cc) @ root / d
    G = (G + G.T) / 2.0
    try:
        vals, vecs = eigh(G)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    total = float(vals.sum())
    keep = range(n_components)
    b = np.stack([inv_root @ vecs[:, p] for p in keep])

    # Deterministic sign: nonnegative integral, else first nonzero positive.
    integrals = basis.gram.sum(axis=1)
    for p in range(n_components):
        s = float(b[p] @ integrals)
        if abs(s) < 1e-12 * max(1.0, float(np.abs(b[p]).max())):
            nz = np.flatnonzero(np.abs(b[p]) > 1e-12)
            s = b[p][nz[0]] if nz.size else 1.0
        if s < 0:
            b[p] = -b[p]

    scores = Cc @ basis.gram @ b.T
    lam = vals[:n_components]
    explained = lam / total if total > 0 else np.zeros(n_components)
    return FPCAModel(basis, ids, mean, b, lam, scores, explained)


def reconstruct(model: FPCAModel, j: int, p_max: int) -> np.ndarray:
    """Basis coefficients of curve ``j`` truncated to ``p_max`` components."""
    if not 0 <= p_max <= model.n_components:
        raise IndexError(f"p_max must be in 0..{model.n_components}")
    coef = model.mean_coefficients.copy()
    for p in range(p_max):
        coef += model.scores[j, p] * model.eigenfunction_coefficients[p]
    return coef


def curve_values(basis: BasisSystem, coefficients, points) -> np.ndarray:
    """Evaluate a coefficient vector on a grid."""
    return evaluate_basis(basis, points) @ np.asarray(coefficients, dtype=float)


def l2_norm(basis: BasisSystem, coefficients) -> float:
    """Function-space norm induced by the Gram matrix."""
    c = np.asarray(coefficients, dtype=float)
    return float(np.sqrt(c @ basis.gram @ c))


# ---------------------------------------------------------------- #
# Export
# ---------------------------------------------------------------- #

def model_to_dict(model: FPCAModel) -> dict:
    return {
        "basis": {
            "order": model.basis.order,
            "num_basis": model.basis.num_basis,
            "domain": list(model.basis.domain),
            "knots": model.basis.knots.tolist(),
        },
        "mean_coefficients": model.mean_coefficients.tolist(),
        "eigenfunction_coefficients": model.eigenfunction_coefficients.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
        "variance_explained": model.variance_explained.tolist(),
        "scores": {district: model.scores[j].tolist()
                   for j, district in enumerate(model.district_ids)},
    }


def write_model_json(model: FPCAModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_scores_csv(model: FPCAModel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["district_id"] + [f"f{p + 1}" for p in range(model.n_components)])
        for j, district in enumerate(model.district_ids):
            w.writerow([district] + [repr(float(v)) for v in model.scores[j]])
