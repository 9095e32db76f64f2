import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splateval.metrics import (
    ScoreTableError,
    UndefinedCorrelation,
    build_report,
    ingest_scores,
    mmrv,
    pearson,
    write_report,
)

from oracles import mmrv_reference, pearson_reference


class TestPearson:
    def test_affine_invariance(self):
        r = np.array([0.1, 0.4, 0.8, 0.3])
        assert pearson(r, 2.0 * r + 0.1) == pytest.approx(1.0, abs=1e-12)

    def test_reversal(self):
        assert pearson(np.array([1, 2, 3.0]), np.array([3, 2, 1.0])) == pytest.approx(-1.0)

    def test_formula_oracle(self):
        r = np.array([0.2, 0.5, 0.9, 0.4])
        s = np.array([0.1, 0.6, 0.8, 0.5])
        assert pearson(r, s) == pytest.approx(pearson_reference(r, s), abs=1e-12)

    def test_constant_vector_rejected(self):
        with pytest.raises(UndefinedCorrelation):
            pearson(np.array([0.5, 0.5, 0.5]), np.array([0.1, 0.2, 0.3]))

    def test_too_short(self):
        with pytest.raises(UndefinedCorrelation):
            pearson(np.array([0.5]), np.array([0.1]))

    @given(st.lists(st.floats(0, 1), min_size=3, max_size=8), st.floats(0.1, 5), st.floats(-1, 1))
    def test_positive_affine_property(self, raw, a, b):
        r = np.array(raw)
        pos, neg = a * r + b, -a * r + b
        try:
            assert pearson(r, pos) == pytest.approx(1.0, abs=1e-9)
            assert pearson(r, neg) == pytest.approx(-1.0, abs=1e-9)
        except UndefinedCorrelation:
            # constant or underflowed-to-constant vectors: the invariance
            # is only claimed where the correlation is defined
            pass


class TestMMRV:
    def test_consistent_ranking_zero(self):
        r = np.array([0.2, 0.5, 0.9])
        assert mmrv(r, r**2) == 0.0  # strictly increasing transform

    def test_hand_worked_pair(self):
        assert mmrv(np.array([0.2, 0.8]), np.array([0.9, 0.1])) == pytest.approx(0.6)

    def test_brute_force_oracle_random(self, rng):
        for _ in range(200):
            n = rng.integers(2, 8)
            r = rng.uniform(0, 1, n)
            s = rng.uniform(0, 1, n)
            assert mmrv(r, s) == mmrv_reference(r, s)

    def test_order_invariance_under_monotone_transforms(self, rng):
        r = rng.uniform(0, 1, 6)
        s = rng.uniform(0, 1, 6)
        base = mmrv(r, s)
        for _ in range(50):
            a = rng.uniform(0.1, 3)
            b = rng.uniform(-1, 1)
            assert mmrv(r, a * s + b) == pytest.approx(base, abs=1e-15)
            assert mmrv(r, np.exp(a * s)) == pytest.approx(base, abs=1e-15)

    def test_bounded_by_max_gap(self, rng):
        for _ in range(50):
            r = rng.uniform(0, 1, 5)
            s = rng.uniform(0, 1, 5)
            assert 0.0 <= mmrv(r, s) <= np.max(np.abs(r[:, None] - r[None, :]))

    def test_exhaustive_grid_small(self):
        # all score vectors of length <= 4 on a coarse grid, vs brute force
        from itertools import product

        grid = [0.0, 0.3, 0.6, 0.9]
        for n in (2, 3):
            for r in product(grid, repeat=n):
                for s in product(grid, repeat=n):
                    assert mmrv(np.array(r), np.array(s)) == mmrv_reference(r, s)


class TestIngest:
    def write_csv(self, path, rows):
        path.write_text(
            "policy,environment,source,score,episodes\n" + "\n".join(rows) + "\n"
        )

    def test_well_formed(self, tmp_path):
        f = tmp_path / "s.csv"
        self.write_csv(
            f,
            [
                "p1,e1,real,0.5,20", "p1,e1,sim,0.6,50",
                "p2,e1,real,0.2,20", "p2,e1,sim,0.1,50",
                "p1,e2,real,0.9,20", "p1,e2,sim,0.8,50",
                "p2,e2,real,0.4,20", "p2,e2,sim,0.5,50",
            ],
        )
        table = ingest_scores([f])
        assert table.policies == ["p1", "p2"]
        assert table.environments == ["e1", "e2"]
        assert table.real[0, 0] == 0.5
        assert not table.missing_cells()

    def test_out_of_range_with_line(self, tmp_path):
        f = tmp_path / "s.csv"
        self.write_csv(f, ["p1,e1,real,1.2,10"])
        with pytest.raises(ScoreTableError, match=":2"):
            ingest_scores([f])

    def test_duplicates(self, tmp_path):
        f = tmp_path / "s.csv"
        self.write_csv(f, ["p1,e1,real,0.5,10", "p1,e1,real,0.5,10"])
        table = ingest_scores([f])
        assert table.real[0, 0] == 0.5
        f2 = tmp_path / "bad.csv"
        self.write_csv(f2, ["p1,e1,real,0.5,10", "p1,e1,real,0.7,10"])
        with pytest.raises(ScoreTableError, match="conflicting"):
            ingest_scores([f2])

    def test_missing_cells_flagged(self, tmp_path):
        f = tmp_path / "s.csv"
        self.write_csv(f, ["p1,e1,real,0.5,10", "p1,e1,sim,0.4,10", "p2,e1,real,0.2,10"])
        table = ingest_scores([f])
        assert ("p2", "e1", "sim") in table.missing_cells()


class TestReport:
    def make_table(self, tmp_path, rows):
        f = tmp_path / "scores.csv"
        f.write_text("policy,environment,source,score,episodes\n" + "\n".join(rows) + "\n")
        return ingest_scores([f])

    def test_perfect_sim(self, tmp_path):
        rows = []
        scores = {"p1": 0.1, "p2": 0.5, "p3": 0.9}
        for env in ("e1", "e2"):
            for pol, sc in scores.items():
                rows.append(f"{pol},{env},real,{sc},10")
                rows.append(f"{pol},{env},sim,{sc},10")
        table = self.make_table(tmp_path, rows)
        report = build_report(table, bootstrap_samples=200)
        for env in ("e1", "e2"):
            assert report.per_environment[env]["pearson_r"] == pytest.approx(1.0)
            assert report.per_environment[env]["mmrv"] == 0.0
        assert report.aggregate["pearson_r"] == pytest.approx(1.0)
        assert report.aggregate["mmrv"] == 0.0

    def test_single_environment_aggregate_equals_env(self, tmp_path):
        rows = [
            "p1,e1,real,0.1,10", "p1,e1,sim,0.3,10",
            "p2,e1,real,0.7,10", "p2,e1,sim,0.5,10",
            "p3,e1,real,0.4,10", "p3,e1,sim,0.45,10",
        ]
        table = self.make_table(tmp_path, rows)
        report = build_report(table, bootstrap_samples=100)
        assert report.aggregate["pearson_r"] == pytest.approx(report.per_environment["e1"]["pearson_r"])
        assert report.aggregate["mmrv"] == pytest.approx(report.per_environment["e1"]["mmrv"])

    def test_aggregate_is_pearson_of_row_means(self, tmp_path, rng):
        rows = []
        reals = rng.uniform(0, 1, (4, 3))
        sims = rng.uniform(0, 1, (4, 3))
        for i in range(4):
            for j in range(3):
                rows.append(f"p{i},e{j},real,{reals[i, j]:.6f},10")
                rows.append(f"p{i},e{j},sim,{sims[i, j]:.6f},10")
        table = self.make_table(tmp_path, rows)
        report = build_report(table, bootstrap_samples=100)
        expect = pearson_reference(table.real.mean(axis=1), table.sim.mean(axis=1))
        assert report.aggregate["pearson_r"] == pytest.approx(expect, abs=1e-12)

    def test_undefined_env_does_not_fail_report(self, tmp_path):
        rows = [
            "p1,e1,real,0.5,10", "p1,e1,sim,0.3,10",
            "p2,e1,real,0.5,10", "p2,e1,sim,0.6,10",  # constant real in e1
            "p1,e2,real,0.2,10", "p1,e2,sim,0.25,10",
            "p2,e2,real,0.8,10", "p2,e2,sim,0.75,10",
        ]
        table = self.make_table(tmp_path, rows)
        report = build_report(table, bootstrap_samples=100)
        assert report.per_environment["e1"]["pearson_r"] is None
        assert "pearson_error" in report.per_environment["e1"]
        assert report.per_environment["e2"]["pearson_r"] == pytest.approx(1.0)

    def test_write_report(self, tmp_path):
        rows = [
            "p1,e1,real,0.1,10", "p1,e1,sim,0.2,10",
            "p2,e1,real,0.9,10", "p2,e1,sim,0.8,10",
        ]
        table = self.make_table(tmp_path, rows)
        report = build_report(table, bootstrap_samples=100)
        write_report(report, table, tmp_path / "out")
        assert (tmp_path / "out" / "report.json").exists()
        points = (tmp_path / "out" / "points.csv").read_text().splitlines()
        assert points[0] == "policy,environment,real,sim"
        assert len(points) == 1 + 2 + 2  # cells + aggregate rows
