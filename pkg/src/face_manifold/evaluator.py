"""Analyses of trained networks: noise sweeps, synthetic generation, diversity.

Diversity is measured by the trace of the sample covariance (sum of
per-parameter variances).  The 2D scatter projections come from a PCA
computed by power iteration with deflation.
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_rng
from .autoencoder import denoise_batch
from .dataset import (
    CorruptionConfig,
    ParamDataset,
    build_dataset,
    normalize_shape,
)
from .morphable_model import Group, sample_uniform_batch
from .trainer import evaluate_mse


@dataclass
class SweepResult:
    sigma: list = field(default_factory=list)
    input_mse: list = field(default_factory=list)
    output_mse: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.sigma, self.input_mse, self.output_mse))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "input_mse", "output_mse"])
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])


def default_sigma_grid(sigma_train, points=9):
    """``points`` log-spaced noise levels from sigma_train/4 to 4*sigma_train."""
    return sigma_train * 2.0 ** np.linspace(-2.0, 2.0, points)


def noise_sweep(weights, clean_set, sigmas, copies=1, seed=0, group=Group.EXPRESSION, threads=1):
    """Input/output MSE of a network over a range of corruption levels.

    ``clean_set`` and ``sigmas`` are in raw parameter units; identity data is
    normalized before it reaches the network, so the reported MSEs are in
    normalized units, as in training.
    """
    clean = np.asarray(clean_set, dtype=np.float64)
    if clean.size == 0:
        raise ValueError("clean set is empty")
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if sigmas.size == 0 or np.any(np.diff(sigmas) <= 0):
        raise ValueError("sigmas must be non-empty and strictly increasing")
    group = Group.parse(group)
    result = SweepResult()
    for idx, sigma in enumerate(sigmas):
        cfg = CorruptionConfig(float(sigma), copies, int(derive_rng(seed, "sweep", idx).integers(2**31)))
        ds = build_dataset(clean, cfg, group=group, threads=threads)
        if group is Group.IDENTITY:
            ds = normalize_shape(ds)
        out_mse, in_mse = evaluate_mse(weights, ds, threads=threads)
        result.sigma.append(float(sigma))
        result.input_mse.append(in_mse)
        result.output_mse.append(out_mse)
    return result


def quadratic_fit_r2(x, y):
    """R^2 of a least-squares quadratic fit of ``y`` against ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    coef = np.polyfit(x, y, 2)
    resid = y - np.polyval(coef, x)
    ss_tot = np.sum((y - y.mean()) ** 2)
    return 1.0 - np.sum(resid ** 2) / ss_tot


def _denoise_group(weights, raw, group, threads):
    if group is Group.IDENTITY:
        return denoise_batch(weights, raw / 1e5, threads=threads) * 1e5
    return denoise_batch(weights, raw, threads=threads)


def generate_synthetic(model, shape_weights, exp_weights, count, k_shape=10.0, k_exp=15.0,
                       seed=0, threads=1):
    """Uniformly drawn parameters mapped back onto the face manifold.

    Returns ``(shape, expression)`` datasets in raw units whose ``clean``
    column is the network output and ``noisy`` column the uniform draw.
    """
    if shape_weights is None or exp_weights is None:
        raise ValueError("both shape and expression weights are required")
    for w, group in ((shape_weights, Group.IDENTITY), (exp_weights, Group.EXPRESSION)):
        if w.spec.input_length != model.param_count(group):
            raise ValueError(
                f"{group.value} network input length {w.spec.input_length} does not match "
                f"model ({model.param_count(group)} parameters)"
            )
    out = []
    for w, group, k in ((shape_weights, Group.IDENTITY, k_shape),
                        (exp_weights, Group.EXPRESSION, k_exp)):
        p = model.param_count(group)
        if count == 0:
            out.append(ParamDataset(group, np.zeros((0, p)), np.zeros((0, p))))
            continue
        raw = sample_uniform_batch(model, group, k, count, derive_rng(seed, "uniform", int(group is Group.IDENTITY)))
        out.append(ParamDataset(group, _denoise_group(w, raw, group, threads), raw))
    return out[0], out[1]


def covariance_trace(samples):
    """Trace of the unbiased sample covariance matrix."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"samples must be (count, dim), got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError("covariance needs at least 2 samples")
    centered = x - x.mean(axis=0)
    return float(np.sum(centered * centered) / (x.shape[0] - 1))


@dataclass
class PCAFit:
    mean: np.ndarray
    components: np.ndarray  # (2, dim), rows ordered by descending eigenvalue
    eigenvalues: np.ndarray

    def project(self, samples):
        return (np.asarray(samples, dtype=np.float64) - self.mean) @ self.components.T


def _fix_sign(v):
    nz = np.flatnonzero(np.abs(v) > 1e-12 * np.max(np.abs(v)))
    return -v if nz.size and v[nz[0]] < 0 else v


def _power_iteration(c, tol, max_iter):
    # start from the column of largest norm: never orthogonal to the top
    # eigenvector unless that eigenvalue is zero
    norms = np.linalg.norm(c, axis=0)
    v = c[:, np.argmax(norms)].copy()
    if norms.max() == 0:
        return None, 0.0
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = c @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return None, 0.0
        w /= nw
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
            v = w
            break
        v = w
    return v, float(v @ c @ v)


def pca_fit_2d(samples, tol=1e-10, max_iter=10_000):
    """Top-2 principal directions via power iteration with deflation."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("PCA needs at least 3 samples of uniform length")
    mean = x.mean(axis=0)
    centered = x - mean
    c = centered.T @ centered / (x.shape[0] - 1)
    v1, l1 = _power_iteration(c, tol, max_iter)
    if v1 is None or l1 <= 0:
        raise ValueError("all samples are identical (rank-0 data)")
    deflated = c - l1 * np.outer(v1, v1)
    v2, l2 = _power_iteration(deflated, tol, max_iter)
    if v2 is None or l2 <= 1e-14 * l1:
        # rank-1 data: any direction orthogonal to v1 has zero variance
        e = np.zeros_like(v1)
        e[np.argmin(np.abs(v1))] = 1.0
        v2 = e - (e @ v1) * v1
        v2 /= np.linalg.norm(v2)
        l2 = max(float(v2 @ c @ v2), 0.0)
    else:
        v2 -= (v2 @ v1) * v1
        v2 /= np.linalg.norm(v2)
    components = np.stack([_fix_sign(v1), _fix_sign(v2)])
    return PCAFit(mean, components, np.array([l1, l2]))


def pca_project_2d(samples, **kwargs):
    """``(n, 2)`` projections of the centered samples onto their top-2 components."""
    fit = pca_fit_2d(samples, **kwargs)
    return fit.project(samples)


@dataclass
class DiversityReport:
    names: list
    traces: dict
    ratios: dict
    projections: dict
    sample_counts: dict
    truncated: dict

    def to_json(self, manifest=None):
        payload = {
            "traces": self.traces,
            "ratios": self.ratios,
            "sample_counts": self.sample_counts,
            "used_all_available": self.truncated,
        }
        if manifest is not None:
            payload = {"manifest": manifest, **payload}
        return json.dumps(payload, indent=2, sort_keys=True)

    def write_scatter_csv(self, path, cap=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "pc1", "pc2"])
            for name in self.names:
                proj = self.projections[name]
                if cap is not None:
                    proj = proj[:cap]
                for pc1, pc2 in proj:
                    w.writerow([name, repr(float(pc1)), repr(float(pc2))])


def diversity_report(datasets, sample_count=2000):
    """Covariance traces, pairwise trace ratios and a shared 2D PCA projection.

    ``datasets`` maps a name to a ``(count, P)`` array in raw units.  Each
    dataset contributes its first ``sample_count`` rows (all rows, flagged,
    if it has fewer).
    """
    items = list(datasets.items()) if isinstance(datasets, dict) else list(datasets)
    if not items:
        raise ValueError("no datasets given")
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate dataset names: {names}")
    used = {}
    flagged = {}
    for name, samples in items:
        x = np.asarray(samples, dtype=np.float64)
        flagged[name] = x.shape[0] < sample_count
        used[name] = x[:sample_count]
    traces = {n: covariance_trace(used[n]) for n in names}
    ratios = {}
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            na, nb = names[a], names[b]
            ratios[f"{na}/{nb}"] = traces[na] / traces[nb] if traces[nb] > 0 else float("inf")
    fit = pca_fit_2d(np.concatenate([used[n] for n in names]))
    projections = {n: fit.project(used[n]) for n in names}
    return DiversityReport(names, traces, ratios, projections,
                           {n: int(used[n].shape[0]) for n in names}, flagged)
