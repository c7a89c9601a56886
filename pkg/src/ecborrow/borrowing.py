"""Adaptive borrowing: scan nested EC subsets over a k-grid, estimate the
MSE of the combined estimator at each size, and keep the minimizer.

The scan fixes one influence ranking, then for each grid size k refits the
pieces that depend on the borrowed pool (the pooled control outcome model
and the sampling score), evaluates the combined estimator, and records its
plug-in bias/variance/MSE.  Trial-only quantities (arm outcome models, the
treatment propensity and the AIPW reference estimate) are computed once.
Ties in the MSE argmin go to the smaller k.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .data import Dataset, split
from .estimators import EstimateReport, tau_aipw, tau_combined
from .influence import InfluenceRanking, rank_and_nest
from .nuisance import assemble_nuisances, DEFAULT_CLIP
from .validation import NumericalError, ValidationError, readonly

__all__ = ["KGrid", "BorrowResult", "scan", "mse_curve_export", "adaptive_borrow"]


@dataclass(frozen=True)
class KGrid:
    """Strictly increasing candidate subset sizes from 0 to N_E inclusive."""

    points: tuple[int, ...]
    step: int

    def __post_init__(self):
        pts = tuple(int(p) for p in self.points)
        if not pts or pts[0] != 0:
            raise ValidationError("grid must start at 0")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValidationError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @property
    def n_ec(self) -> int:
        return self.points[-1]

    @classmethod
    def from_step(cls, n_ec: int, step: int | None = None) -> "KGrid":
        """Grid 0, step, 2*step, ..., N_E (endpoint always included).

        The default step N_E // 20 bounds the scan at about twenty refits.
        """
        if n_ec < 1:
            raise ValidationError("need at least one EC row")
        if step is None:
            step = max(1, n_ec // 20)
        if step < 1:
            raise ValidationError("grid step must be >= 1")
        pts = list(range(0, n_ec + 1, step))
        if pts[-1] != n_ec:
            pts.append(n_ec)
        return cls(points=tuple(pts), step=int(step))


@dataclass(frozen=True)
class BorrowResult:
    """Outcome of one MSE scan: curves, the selected size and final report."""

    grid: KGrid
    mse_curve: np.ndarray
    bias_curve: np.ndarray
    se_curve: np.ndarray
    k_hat: int
    borrowed_indices: np.ndarray
    final: EstimateReport
    ranking: InfluenceRanking
    calibrated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mse_curve", readonly(np.asarray(self.mse_curve, float)))
        object.__setattr__(self, "bias_curve", readonly(np.asarray(self.bias_curve, float)))
        object.__setattr__(self, "se_curve", readonly(np.asarray(self.se_curve, float)))
        object.__setattr__(self, "borrowed_indices",
                           readonly(np.asarray(self.borrowed_indices, int)))


def _argmin_smallest(values: np.ndarray) -> int:
    # exact argmin; ties resolved toward the smallest index (borrow less)
    return int(np.argmin(values))


def _smooth(values: np.ndarray, window: int = 3) -> np.ndarray:
    if window <= 1 or len(values) < window:
        return values
    kernel = np.ones(window) / window
    padded = np.concatenate([values[:1].repeat(window // 2), values,
                             values[-1:].repeat(window // 2)])
    return np.convolve(padded, kernel, mode="valid")


def scan(ds: Dataset, ranking: InfluenceRanking | None = None,
         grid: KGrid | None = None, e1_mode: str = "known",
         clip: float = DEFAULT_CLIP, ridge: float | None = None,
         smooth_argmin: bool = False, calibrated: bool = False) -> BorrowResult:
    """Run the nested-subset MSE scan and select the borrow size.

    A nuisance failure at some grid point aborts with the offending k in
    the error message.  ``smooth_argmin`` applies a window-3 moving average
    to the MSE curve for the argmin decision only (curves stay raw).
    """
    sp = split(ds)
    if ranking is None:
        ranking = rank_and_nest(ds, ridge=ridge)
    if len(ranking.order) != sp.n_ec:
        raise ValidationError("ranking does not cover this dataset's EC rows")
    if grid is None:
        grid = KGrid.from_step(sp.n_ec)
    if grid.n_ec > sp.n_ec:
        raise ValidationError(
            f"grid ends at {grid.n_ec} but dataset has only {sp.n_ec} EC rows"
        )

    base = assemble_nuisances(ds, borrow_set=(), e1_mode=e1_mode, clip=clip,
                              ridge=ridge)
    rct_report = tau_aipw(ds, nu=base, method="nb")

    ks = grid.points
    mse = np.empty(len(ks))
    bias = np.empty(len(ks))
    se = np.empty(len(ks))
    reports: list[EstimateReport] = []
    for i, k in enumerate(ks):
        borrow = ranking.prefix(k)
        try:
            if k == 0:
                rep = rct_report
            else:
                nu = assemble_nuisances(ds, borrow, e1_mode=e1_mode, clip=clip,
                                        ridge=ridge, base=base)
                rep = tau_combined(ds, nu, borrow,
                                   tau_rct=rct_report.tau_hat)
        except (NumericalError, np.linalg.LinAlgError) as e:
            raise NumericalError(f"nuisance fit failed at k={k}: {e}") from e
        reports.append(rep)
        mse[i], bias[i], se[i] = rep.mse_hat, rep.bias_hat, rep.se_hat

    decision = _smooth(mse, 3) if smooth_argmin else mse
    i_hat = _argmin_smallest(decision)
    k_hat = ks[i_hat]
    final = reports[i_hat]
    return BorrowResult(
        grid=grid,
        mse_curve=mse,
        bias_curve=bias,
        se_curve=se,
        k_hat=k_hat,
        borrowed_indices=ranking.prefix(k_hat),
        final=final,
        ranking=ranking,
        calibrated=calibrated,
    )


def adaptive_borrow(ds: Dataset, grid_step: int | None = None,
                    e1_mode: str = "known", clip: float = DEFAULT_CLIP,
                    ridge: float | None = None,
                    smooth_argmin: bool = False) -> BorrowResult:
    """Rank, scan and select in one call (the uncalibrated pipeline)."""
    sp = split(ds)
    grid = KGrid.from_step(sp.n_ec, grid_step)
    return scan(ds, grid=grid, e1_mode=e1_mode, clip=clip, ridge=ridge,
                smooth_argmin=smooth_argmin)


def mse_curve_export(result: BorrowResult) -> str:
    """CSV text of the scan curves: one row per grid point."""
    buf = io.StringIO()
    buf.write("k,mse_hat,bias_hat,se_hat\n")
    for k, m, b, s in zip(result.grid.points, result.mse_curve,
                          result.bias_curve, result.se_curve):
        buf.write(f"{k},{float(m)!r},{float(b)!r},{float(s)!r}\n")
    return buf.getvalue()
