"""Real-to-sim faithfulness metrics over policy score tables.

Two headline quantities per environment and in aggregate: the Pearson
correlation between real and simulated scores, and the mean maximum rank
violation, MMRV = (1/N) sum_i max_j |R_i - R_j| * 1[(S_i < S_j) != (R_i < R_j)],
implemented with the strict-less-than indicator exactly as written (ties
in the simulated scores against distinct real scores flag one direction
of the pair only).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class UndefinedCorrelation(ValueError):
    """Pearson r is undefined for constant score vectors."""


class ScoreTableError(ValueError):
    """Malformed or inconsistent score table input."""


def pearson(real: np.ndarray, sim: np.ndarray) -> float:
    """Centered dot product over the product of norms; errors when undefined."""
    real = np.asarray(real, dtype=float)
    sim = np.asarray(sim, dtype=float)
    if real.shape != sim.shape or real.ndim != 1:
        raise ScoreTableError("score vectors must be 1-d and the same length")
    n = len(real)
    if n < 2:
        raise UndefinedCorrelation(f"need at least 2 policies, got {n}")
    rc = real - real.mean()
    sc = sim - sim.mean()
    denom = np.sqrt((rc**2).sum()) * np.sqrt((sc**2).sum())
    if denom == 0.0:
        raise UndefinedCorrelation("constant score vector: correlation undefined")
    return float((rc * sc).sum() / denom)


def mmrv(real: np.ndarray, sim: np.ndarray) -> float:
    """Mean over policies of the worst real gap among sim-misordered pairs."""
    real = np.asarray(real, dtype=float)
    sim = np.asarray(sim, dtype=float)
    if real.shape != sim.shape or real.ndim != 1:
        raise ScoreTableError("score vectors must be 1-d and the same length")
    n = len(real)
    if n < 2:
        raise ScoreTableError(f"need at least 2 policies, got {n}")
    real_lt = real[:, None] < real[None, :]
    sim_lt = sim[:, None] < sim[None, :]
    violated = real_lt != sim_lt
    gaps = np.abs(real[:, None] - real[None, :])
    worst = np.where(violated, gaps, 0.0).max(axis=1)
    return float(worst.mean())


def misranked_pairs(real, sim, policies: list[str]) -> list[dict]:
    """Sim-misordered pairs with their real-score severity, descending."""
    real = np.asarray(real, dtype=float)
    sim = np.asarray(sim, dtype=float)
    out = []
    n = len(real)
    for i in range(n):
        for j in range(i + 1, n):
            if (sim[i] < sim[j]) != (real[i] < real[j]) or (sim[j] < sim[i]) != (real[j] < real[i]):
                out.append(
                    {
                        "a": policies[i],
                        "b": policies[j],
                        "severity": float(abs(real[i] - real[j])),
                        "real": [float(real[i]), float(real[j])],
                        "sim": [float(sim[i]), float(sim[j])],
                    }
                )
    out.sort(key=lambda d: -d["severity"])
    return out


@dataclass
class ScoreTable:
    policies: list[str]
    environments: list[str]
    real: np.ndarray  # (N, E), NaN = missing
    sim: np.ndarray  # (N, E)
    episodes: np.ndarray  # (N, E, 2) counts for (real, sim)

    def __post_init__(self):
        n, e = len(self.policies), len(self.environments)
        if self.real.shape != (n, e) or self.sim.shape != (n, e):
            raise ScoreTableError("score matrices do not match policy/environment counts")

    def missing_cells(self) -> list[tuple[str, str, str]]:
        out = []
        for i, p in enumerate(self.policies):
            for j, env in enumerate(self.environments):
                if np.isnan(self.real[i, j]):
                    out.append((p, env, "real"))
                if np.isnan(self.sim[i, j]):
                    out.append((p, env, "sim"))
        return out

    def per_policy_means(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nanmean(self.real, axis=1), np.nanmean(self.sim, axis=1)


@dataclass
class FaithfulnessReport:
    per_environment: dict[str, dict]
    aggregate: dict
    policies: list[str]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "policies": self.policies,
            "per_environment": self.per_environment,
            "aggregate": self.aggregate,
            "warnings": self.warnings,
        }


def bootstrap_interval(
    real: np.ndarray, sim: np.ndarray, samples: int = 10_000, seed: int = 0
) -> tuple[float, float, int]:
    """Percentile 95% interval for r, resampling policies with replacement.

    Resamples whose vectors go constant have no defined r and are skipped;
    the count of valid resamples is returned alongside the interval.
    """
    rng = np.random.default_rng(seed)
    n = len(real)
    idx = rng.integers(0, n, size=(samples, n))
    vals = []
    for row in idx:
        rr, ss = real[row], sim[row]
        if np.ptp(rr) == 0 or np.ptp(ss) == 0:
            continue
        vals.append(pearson(rr, ss))
    if not vals:
        return float("nan"), float("nan"), 0
    lo, hi = np.percentile(vals, [2.5, 97.5])
    return float(lo), float(hi), len(vals)


def _metrics_block(real, sim, policies, bootstrap_samples, seed) -> dict:
    block: dict = {}
    try:
        block["pearson_r"] = pearson(real, sim)
        lo, hi, used = bootstrap_interval(real, sim, bootstrap_samples, seed)
        block["pearson_r_ci95"] = [lo, hi]
        block["bootstrap_valid_samples"] = used
    except UndefinedCorrelation as exc:
        block["pearson_r"] = None
        block["pearson_error"] = str(exc)
    block["mmrv"] = mmrv(real, sim)
    block["misranked_pairs"] = misranked_pairs(real, sim, policies)
    return block


def build_report(table: ScoreTable, bootstrap_samples: int = 10_000, seed: int = 0) -> FaithfulnessReport:
    """Per-environment metrics plus aggregate metrics on per-policy means."""
    per_env = {}
    warnings = [f"missing cell: {p}/{e}/{src}" for p, e, src in table.missing_cells()]
    for j, env in enumerate(table.environments):
        real, sim = table.real[:, j], table.sim[:, j]
        ok = ~np.isnan(real) & ~np.isnan(sim)
        if ok.sum() < 2:
            per_env[env] = {"pearson_r": None, "pearson_error": "fewer than 2 complete policies"}
            continue
        pol = [p for p, m in zip(table.policies, ok) if m]
        per_env[env] = _metrics_block(real[ok], sim[ok], pol, bootstrap_samples, seed)
    mean_real, mean_sim = table.per_policy_means()
    aggregate = _metrics_block(mean_real, mean_sim, table.policies, bootstrap_samples, seed)
    return FaithfulnessReport(per_env, aggregate, table.policies, warnings)


# --- CSV ingestion and report output --------------------------------------------


def ingest_scores(paths: list) -> ScoreTable:
    """Read (policy, environment, source, score, episodes) CSVs into a table.

    Duplicate cells with equal scores deduplicate silently; conflicting
    values are an error. Missing cells stay NaN and are reported.
    """
    cells: dict[tuple[str, str, str], tuple[float, int]] = {}
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            need = {"policy", "environment", "source", "score", "episodes"}
            if reader.fieldnames is None or not need.issubset(set(reader.fieldnames)):
                raise ScoreTableError(f"{path}: header must contain {sorted(need)}")
            for ln, row in enumerate(reader, start=2):
                src = row["source"].strip().lower()
                if src not in ("real", "sim"):
                    raise ScoreTableError(f"{path}:{ln}: source must be real|sim, got {row['source']!r}")
                try:
                    score = float(row["score"])
                    episodes = int(row["episodes"])
                except ValueError as exc:
                    raise ScoreTableError(f"{path}:{ln}: {exc}") from exc
                if not (0.0 <= score <= 1.0):
                    raise ScoreTableError(f"{path}:{ln}: score {score:g} outside [0, 1]")
                key = (row["policy"].strip(), row["environment"].strip(), src)
                if key in cells:
                    old = cells[key]
                    if abs(old[0] - score) > 1e-12:
                        raise ScoreTableError(
                            f"{path}:{ln}: conflicting duplicate for {key}: {old[0]:g} vs {score:g}"
                        )
                    continue
                cells[key] = (score, episodes)
    if not cells:
        raise ScoreTableError("no score rows found")
    policies = sorted({k[0] for k in cells})
    envs = sorted({k[1] for k in cells})
    n, e = len(policies), len(envs)
    real = np.full((n, e), np.nan)
    sim = np.full((n, e), np.nan)
    episodes = np.zeros((n, e, 2), dtype=int)
    for (pol, env, src), (score, eps) in cells.items():
        i, j = policies.index(pol), envs.index(env)
        if src == "real":
            real[i, j] = score
            episodes[i, j, 0] = eps
        else:
            sim[i, j] = score
            episodes[i, j, 1] = eps
    return ScoreTable(policies, envs, real, sim, episodes)


def write_report(report: FaithfulnessReport, table: ScoreTable, out_dir) -> None:
    """Structured JSON report plus a plot-data CSV of (real, sim) points."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    with open(out_dir / "points.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "environment", "real", "sim"])
        for i, pol in enumerate(table.policies):
            for j, env in enumerate(table.environments):
                writer.writerow([pol, env, repr(float(table.real[i, j])), repr(float(table.sim[i, j]))])
        mean_real, mean_sim = table.per_policy_means()
        for i, pol in enumerate(table.policies):
            writer.writerow([pol, "__aggregate__", repr(float(mean_real[i])), repr(float(mean_sim[i]))])
