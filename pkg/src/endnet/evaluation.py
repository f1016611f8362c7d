"""Metrics and estimated-to-ground-truth endmember matching."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .datatypes import AbundanceMap, SpectraMatrix


def sad_metric(e, e_hat):
    """Spectral angle between two signatures, in radians (scale-invariant)."""
    e = np.asarray(e, dtype=np.float64)
    e_hat = np.asarray(e_hat, dtype=np.float64)
    ne, nh = np.linalg.norm(e), np.linalg.norm(e_hat)
    if ne == 0.0 or nh == 0.0:
        raise ValueError("sad_metric requires nonzero-norm inputs")
    return float(np.arccos(np.clip(np.dot(e, e_hat) / (ne * nh), -1.0, 1.0)))


def rmse_metric(y, y_hat):
    """Root mean square error between two equal-length vectors."""
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ValueError("rmse_metric requires equal lengths")
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def _sad_cost(estimated, truth):
    cost = np.empty((estimated.count, truth.count))
    for i in range(estimated.count):
        for j in range(truth.count):
            cost[i, j] = sad_metric(estimated.rows[i], truth.rows[j])
    return cost


def match_endmembers(estimated: SpectraMatrix, truth: SpectraMatrix, greedy=False):
    """One-to-one assignment estimated-index -> truth-index by angle cost.

    Default: optimal bipartite matching (guaranteed bijection on matched
    indices).  ``greedy=True`` matches each ground truth to its most
    similar remaining estimate instead.
    """
    if estimated.count < truth.count:
        raise ValueError("need at least as many estimates as ground-truth rows")
    cost = _sad_cost(estimated, truth)
    if greedy:
        assignment = {}
        taken = set()
        for j in range(truth.count):
            order = np.argsort(cost[:, j])
            i = next(int(i) for i in order if int(i) not in taken)
            taken.add(i)
            assignment[i] = j
        return assignment
    rows, cols = linear_sum_assignment(cost)
    return {int(i): int(j) for i, j in zip(rows, cols)}


@dataclass
class EvalReport:
    assignment: dict
    per_endmember_sad: list
    per_endmember_rmse: list | None
    avg_sad: float
    avg_rmse: float | None
    unmatched_estimates: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["estimated", "truth", "sad", "rmse"])
            for (i, j), sad, rmse in zip(
                    sorted(self.assignment.items(), key=lambda kv: kv[1]),
                    self.per_endmember_sad,
                    self.per_endmember_rmse or [""] * len(self.per_endmember_sad)):
                writer.writerow([i, j, f"{sad:.10g}", rmse if rmse == "" else f"{rmse:.10g}"])
            writer.writerow(["avg", "", f"{self.avg_sad:.10g}",
                             "" if self.avg_rmse is None else f"{self.avg_rmse:.10g}"])

    def to_text(self):
        """Human-readable table; values reported x 10^-2."""
        lines = ["endmember   SAD (x1e-2)   RMSE (x1e-2)"]
        for n, (i, j) in enumerate(sorted(self.assignment.items(), key=lambda kv: kv[1])):
            sad = self.per_endmember_sad[n] * 100.0
            if self.per_endmember_rmse is not None:
                rmse = f"{self.per_endmember_rmse[n] * 100.0:12.2f}"
            else:
                rmse = "           -"
            lines.append(f"#{j + 1} (est {i + 1})  {sad:10.2f}  {rmse}")
        avg_rmse = "           -" if self.avg_rmse is None else f"{self.avg_rmse * 100.0:12.2f}"
        lines.append(f"avg         {self.avg_sad * 100.0:10.2f}  {avg_rmse}")
        if self.unmatched_estimates:
            lines.append(f"unmatched estimates (excluded from averages): "
                         f"{[i + 1 for i in self.unmatched_estimates]}")
        return "\n".join(lines)


def evaluate(estimated: SpectraMatrix, gt_spectra: SpectraMatrix,
             abundances: AbundanceMap | None = None,
             gt_abundances: AbundanceMap | None = None,
             greedy=False) -> EvalReport:
    """Match endmembers, then per-endmember angle error and abundance RMSE.

    RMSE is computed per matched endmember over all pixels when both
    abundance maps are given; estimates beyond the ground-truth count are
    reported but excluded from the averages.
    """
    if estimated.bands != gt_spectra.bands:
        raise ValueError("band count mismatch between estimates and ground truth")
    assignment = match_endmembers(estimated, gt_spectra, greedy=greedy)
    pairs = sorted(assignment.items(), key=lambda kv: kv[1])
    sads = [sad_metric(estimated.rows[i], gt_spectra.rows[j]) for i, j in pairs]

    rmses = None
    if abundances is not None and gt_abundances is not None:
        if abundances.k != estimated.count or gt_abundances.k != gt_spectra.count:
            raise ValueError("abundance map width must match the spectra counts")
        if abundances.n_pixels != gt_abundances.n_pixels:
            raise ValueError("abundance maps cover different pixel counts")
        rmses = [rmse_metric(gt_abundances.values[:, j], abundances.values[:, i])
                 for i, j in pairs]

    unmatched = [i for i in range(estimated.count) if i not in assignment]
    return EvalReport(
        assignment=assignment,
        per_endmember_sad=sads,
        per_endmember_rmse=rmses,
        avg_sad=float(np.mean(sads)),
        avg_rmse=None if rmses is None else float(np.mean(rmses)),
        unmatched_estimates=unmatched)
