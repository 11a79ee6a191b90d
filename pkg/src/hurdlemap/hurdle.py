"""Sequential two-part estimation with threshold-based zero routing.

The binary component is fitted first.  Its posterior predictive
occurrence probabilities split the observed zeros into structural zeros
(dropped from the count likelihood) and count zeros (kept), governed by
a threshold chosen to minimize WAIC over the nonzero observations.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .diagnostics import compute_waic
from .engine import FitResult, linear_predictor_samples, optimize_hyper
from .likelihoods import log_pmf
from .models import ModelParts, subset_component

DEFAULT_PI_SAMPLES = 10_000
DEFAULT_WAIC_SAMPLES = 1000
MAX_GRID = 201


class HurdleError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def make_binary(y) -> np.ndarray:
    """Occurrence indicator: 1 wherever the count is positive."""
    y = np.asarray(y)
    if np.any(y < 0):
        raise ValueError("counts must be nonnegative")
    return (y > 0).astype(np.int64)


@dataclass
class CountOutcome:
    """Count-component response: observed counts, kept zeros, and NAs.

    `values` holds the working response; entries flagged by `is_na` are
    structural zeros excluded from the count likelihood entirely.
    """

    values: np.ndarray
    is_na: np.ndarray

    @property
    def n_structural(self) -> int:
        return int(self.is_na.sum())

    def kept(self) -> np.ndarray:
        return ~self.is_na


def classify_zeros(y, pi_tilde, c: float) -> CountOutcome:
    """Zeros with predictive occurrence below c become structural (NA).

    c = 0 keeps every zero as a count zero; c = 1 routes every zero with
    predictive probability below one to the structural side.
    """
    y = np.asarray(y, dtype=float)
    pi_tilde = np.asarray(pi_tilde, dtype=float)
    if np.any((pi_tilde < 0) | (pi_tilde > 1)):
        raise ValueError("predictive probabilities must lie in [0, 1]")
    if not 0.0 <= c <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    is_zero = y == 0
    is_na = is_zero & (pi_tilde < c)
    return CountOutcome(values=np.where(is_na, np.nan, y), is_na=is_na)


def predict_pi_tilde(binary_fit: FitResult,
                     n_samples: int = DEFAULT_PI_SAMPLES,
                     seed: int = 0) -> np.ndarray:
    """Posterior predictive occurrence probabilities, Monte Carlo averaged."""
    model = binary_fit.model
    total = np.zeros(model.n)
    done = 0
    for eta_chunk in linear_predictor_samples(binary_fit, n_samples, seed=seed):
        total += expit(eta_chunk).sum(axis=1)
        done += eta_chunk.shape[1]
    return total / done


def default_threshold_grid(y, pi_tilde, cap: int = MAX_GRID) -> np.ndarray:
    """Unique predictive probabilities at the observed zeros, plus {0, 1}.

    Quantile-thinned to at most `cap` candidates.
    """
    y = np.asarray(y)
    at_zero = np.unique(np.asarray(pi_tilde)[y == 0])
    if at_zero.size > cap - 2:
        qs = np.linspace(0, 1, cap - 2)
        at_zero = np.unique(np.quantile(at_zero, qs, method="nearest"))
    return np.unique(np.concatenate([[0.0], at_zero, [1.0]]))


@dataclass
class ThresholdSelection:
    grid: np.ndarray
    waic_nonzero: np.ndarray
    chosen_c: float
    n_structural: np.ndarray
    warnings: list = field(default_factory=list)

    def report(self) -> dict:
        return {
            "chosen_c": float(self.chosen_c),
            "grid": [float(c) for c in self.grid],
            "waic_nonzero": [None if np.isnan(w) else float(w)
                             for w in self.waic_nonzero],
            "n_structural": [int(k) for k in self.n_structural],
            "warnings": list(self.warnings),
        }


def count_loglik_matrix(fit: FitResult, n_samples: int, seed: int):
    """(samples, n) log-likelihood matrix for a fitted count component."""
    model = fit.model
    rows = []
    for eta_chunk in linear_predictor_samples(fit, n_samples, seed=seed):
        etaT = eta_chunk.T
        rows.append(log_pmf(fit.family, np.broadcast_to(model.y, etaT.shape),
                            etaT))
    return np.vstack(rows)


def nonzero_waic(fit: FitResult, n_samples: int, seed: int) -> float:
    """WAIC restricted to the strictly positive counts of a fitted model."""
    ll = count_loglik_matrix(fit, n_samples, seed)
    mask = fit.model.y > 0
    waic, _ = compute_waic(ll, mask)
    return waic


def select_threshold(y, pi_tilde,
                     count_fitter: Callable[[CountOutcome, Optional[np.ndarray]],
                                            FitResult],
                     grid=None,
                     grid_cap: int = MAX_GRID,
                     waic_samples: int = DEFAULT_WAIC_SAMPLES,
                     seed: int = 0,
                     n_threads: int = 1):
    """Scan candidate thresholds; keep the count fit with smallest WAIC.

    Candidates producing identical zero classifications share one fit.
    Every retained fit is warm-started from the first candidate's
    optimum so results do not depend on the thread count.  Returns
    (ThresholdSelection, best FitResult).
    """
    y = np.asarray(y, dtype=float)
    pi_tilde = np.asarray(pi_tilde, dtype=float)
    if grid is None:
        grid = default_threshold_grid(y, pi_tilde, cap=grid_cap)
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid.size == 0 or grid.min() < 0 or grid.max() > 1:
        raise ValueError("threshold grid must be a nonempty subset of [0, 1]")

    outcomes = [classify_zeros(y, pi_tilde, c) for c in grid]
    signatures = [o.is_na.tobytes() for o in outcomes]
    unique_sigs = {}
    for i, sig in enumerate(signatures):
        unique_sigs.setdefault(sig, i)

    warnings = []
    results = {}  # signature -> (waic, fit) or None on failure

    first_sig = signatures[0]
    first_idx = unique_sigs[first_sig]
    warm = None
    try:
        fit0 = count_fitter(outcomes[first_idx], None)
        results[first_sig] = (nonzero_waic(fit0, waic_samples, seed), fit0)
        warm = fit0.hyper_mode
    except Exception as exc:  # noqa: BLE001 - per-candidate failures are recorded
        results[first_sig] = None
        warnings.append(f"c={grid[first_idx]:.6g}: {exc}")

    remaining = [(sig, i) for sig, i in unique_sigs.items() if sig != first_sig]

    def run_one(item):
        sig, i = item
        try:
            fit = count_fitter(outcomes[i], warm)
            return sig, (nonzero_waic(fit, waic_samples, seed), fit), None
        except Exception as exc:  # noqa: BLE001
            return sig, None, f"c={grid[i]:.6g}: {exc}"

    if n_threads > 1 and len(remaining) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            computed = list(pool.map(run_one, remaining))
    else:
        computed = [run_one(item) for item in remaining]
    for sig, value, warning in computed:
        results[sig] = value
        if warning:
            warnings.append(warning)

    waics = np.full(grid.size, np.nan)
    for i, sig in enumerate(signatures):
        if results[sig] is not None:
            waics[i] = results[sig][0]
    if np.isnan(waics).all():
        raise HurdleError("select-threshold",
                          "the count model failed for every candidate")
    best = int(np.nanargmin(waics))  # ties resolve to the smallest c
    best_fit = results[signatures[best]][1]
    selection = ThresholdSelection(
        grid=grid, waic_nonzero=waics, chosen_c=float(grid[best]),
        n_structural=np.array([o.n_structural for o in outcomes]),
        warnings=warnings)
    return selection, best_fit


@dataclass
class SequentialFit:
    binary_fit: FitResult
    count_fit: FitResult
    selection: ThresholdSelection
    pi_tilde: np.ndarray
    outcome: CountOutcome
    timings: dict


def fit_sequential(y, binary_parts: ModelParts, count_parts: ModelParts,
                   grid=None,
                   grid_cap: int = MAX_GRID,
                   pi_samples: int = DEFAULT_PI_SAMPLES,
                   waic_samples: int = DEFAULT_WAIC_SAMPLES,
                   seed: int = 0,
                   n_threads: int = 1) -> SequentialFit:
    """Binary fit, predictive classification, threshold scan, count fit.

    The count component consumes the binary component only through the
    predictive probabilities; structural zeros contribute nothing to the
    count likelihood.
    """
    y = np.asarray(y, dtype=float)
    timings = {}

    t0 = time.perf_counter()
    try:
        binary_fit = optimize_hyper(binary_parts.model)
    except Exception as exc:
        raise HurdleError("binary-fit", str(exc)) from exc
    timings["binary_fit_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pi_tilde = predict_pi_tilde(binary_fit, n_samples=pi_samples, seed=seed)
    timings["pi_tilde_s"] = time.perf_counter() - t0

    def count_fitter(outcome: CountOutcome, warm):
        keep = outcome.kept()
        parts_c = subset_component(count_parts, keep, outcome.values[keep])
        return optimize_hyper(parts_c.model, init=warm)

    t0 = time.perf_counter()
    selection, count_fit = select_threshold(
        y, pi_tilde, count_fitter, grid=grid, grid_cap=grid_cap,
        waic_samples=waic_samples, seed=seed + 1, n_threads=n_threads)
    timings["threshold_scan_s"] = time.perf_counter() - t0

    outcome = classify_zeros(y, pi_tilde, selection.chosen_c)
    return SequentialFit(binary_fit=binary_fit, count_fit=count_fit,
                         selection=selection, pi_tilde=pi_tilde,
                         outcome=outcome, timings=timings)
