import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gp_limit_lab import cli
from gp_limit_lab.harness import (
    AuditReport,
    AuditRow,
    ExperimentConfig,
    applicable_bound,
    derived_seed,
    fit_loglog_slope,
    kernel_identity_error,
    run_coefficient_table,
    run_rate_experiment,
    sigma_audit_rows,
    write_csv,
)
from gp_limit_lab.hermite import Activation


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_defaults(self):
        c = ExperimentConfig()
        assert c.k_grid[0] == 16 and c.k_grid[-1] == 4096 and c.estimator == "auto"

    def test_parse(self):
        c = ExperimentConfig.parse("seed = 7  # comment\nk_grid = 4, 8,16\nactivation = relu\n\ndouble_n = false\nC = 2.5\n")
        assert c.seed == 7 and c.k_grid == (4, 8, 16) and c.activation == "relu"
        assert c.double_n is False and c.C == 2.5

    @pytest.mark.parametrize(
        "text",
        ["k_grid = ", "k_grid = 8,4", "k_grid = 4,4", "bogus = 1", "seed = 1\nseed = 2", "n 3", "estimator = lp", "n = 0"],
    )
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            ExperimentConfig.parse(text)

    def test_text_round_trip(self):
        c = ExperimentConfig(seed=3, k_grid=(2, 5, 9), activation="tanh", gp=True)
        assert ExperimentConfig.parse(c.to_text()) == c

    def test_hash_stable_and_sensitive(self):
        a = ExperimentConfig(seed=1)
        assert a.config_hash == ExperimentConfig(seed=1).config_hash
        assert len(a.config_hash) == 12
        assert a.config_hash != ExperimentConfig(seed=2).config_hash
        assert a.config_hash != a.replace(C=2.0).config_hash

    def test_hash_ignores_locations(self):
        a = ExperimentConfig(seed=1, out="x.csv")
        assert a.config_hash == a.replace(out="elsewhere/y.csv", a="p", b="q").config_hash
        assert "out" not in a.to_dict() and a.to_dict(locations=True)["out"] == "x.csv"

    def test_replace_coerces_strings_and_skips_none(self):
        c = ExperimentConfig().replace(n="5", seed=None, k_grid="1,2")
        assert c.n == 5 and c.seed is None and c.k_grid == (1, 2)

    def test_require_seed(self):
        with pytest.raises(ValueError, match="seed"):
            ExperimentConfig().require_seed()
        assert ExperimentConfig(seed=0).require_seed() == 0

    def test_stamp(self):
        s = ExperimentConfig(seed=1, C=3.0).stamp()
        assert s == {"config_hash": ExperimentConfig(seed=1, C=3.0).config_hash, "C": 3.0, "C_prime": 1.0}


class TestDerivedSeed:
    def test_deterministic_and_distinct(self):
        assert derived_seed(1, 2, 3) == derived_seed(1, 2, 3)
        seeds = {derived_seed(1, t, k) for t in range(1, 6) for k in (16, 32, 64)}
        assert len(seeds) == 15

    def test_nonnegative_63_bit(self):
        s = derived_seed(2**40, 9)
        assert 0 <= s < 2**63


class TestFit:
    def test_inverse(self):
        fit = fit_loglog_slope((k, 1 / k) for k in (16, 32, 64, 128, 256))
        assert fit.slope == pytest.approx(-1.0, abs=1e-9)
        assert fit.r_squared == pytest.approx(1.0)

    def test_cube_root(self):
        fit = fit_loglog_slope((k, 5 * k ** (-1 / 3)) for k in (2, 4, 8, 16))
        assert fit.slope == pytest.approx(-1 / 3, abs=1e-9)
        assert math.exp(fit.intercept) == pytest.approx(5.0)

    def test_constant(self):
        fit = fit_loglog_slope((k, 0.3) for k in (1, 2, 3, 4))
        assert fit.slope == pytest.approx(0.0, abs=1e-12)

    @given(st.floats(-3, 3), st.floats(0.1, 10))
    @settings(max_examples=30, deadline=None)
    def test_power_laws(self, p, c):
        fit = fit_loglog_slope((k, c * k**p) for k in (3, 7, 20, 55, 150))
        assert fit.slope == pytest.approx(p, abs=1e-8)

    @pytest.mark.parametrize("pairs", [[(1, 1), (2, 1), (3, 1)], [(1, 1), (2, 0.0), (3, 1), (4, 1)], [(1, 1), (2, -1), (3, 1), (4, 1)]])
    def test_rejects(self, pairs):
        with pytest.raises(ValueError):
            fit_loglog_slope(pairs)


class TestCsv:
    def test_stamp_and_cells(self, tmp_path):
        path = write_csv(tmp_path / "sub" / "t.csv", [{"a": 0.1, "b": True, "c": None}], ("a", "b", "c"), {"h": "x"})
        assert path.read_text() == "a,b,c,h\n0.1,true,,x\n"

    def test_float_round_trip(self, tmp_path):
        v = 1 / 3
        rows = read_rows(write_csv(tmp_path / "t.csv", [{"v": np.float64(v)}], ("v",)))
        assert float(rows[0]["v"]) == v


class TestCoefficientTable:
    def test_relu_ratio_constant(self):
        rows = run_coefficient_table("relu", 40, 128)
        ratios = [r["ratio"] for r in rows if r["m"] >= 2 and r["m"] % 2 == 0]
        assert len(ratios) == 20
        assert max(ratios) - min(ratios) <= 1e-6
        assert all(r["ratio"] is None for r in rows if r["m"] % 2 == 1 and r["m"] > 1)

    def test_tanh_even_rows_vanish(self):
        rows = run_coefficient_table(Activation.tanh(), 20)
        assert all(abs(r["quadrature"]) <= 1e-13 for r in rows if r["m"] % 2 == 0)
        assert all(r["closed_form"] is None for r in rows)

    def test_polynomial_remainder(self):
        rows = run_coefficient_table("poly:1,0,0,2", 6)
        assert rows[3]["remainder"] == pytest.approx(0.0, abs=1e-12)
        assert rows[2]["remainder"] == pytest.approx(rows[3]["quadrature"] ** 2)

    def test_remainders_nonincreasing(self):
        rem = [r["remainder"] for r in run_coefficient_table("relu", 30)]
        assert all(b <= a + 1e-15 for a, b in zip(rem, rem[1:]))

    def test_cap(self):
        with pytest.raises(ValueError):
            run_coefficient_table("relu", 201)


class TestAudit:
    def test_report_exit_codes(self):
        ok = AuditRow("a", 1.0, 2.0, True, True)
        reported = AuditRow("b", 3.0, 2.0, False, False)
        bad = AuditRow("c", 3.0, 2.0, False, True)
        assert AuditReport([ok, reported]).exit_code == 0
        report = AuditReport([ok, reported, bad])
        assert report.exit_code == 1 and report.failed_asserted == [bad]

    @pytest.mark.parametrize("poly,n", [("0,0,1", 3), ("1,-2,0,0.5", 2), ("0,0,0,0,1", 4)])
    def test_kernel_identity(self, poly, n):
        assert kernel_identity_error(poly, n, 50, 0) <= 1e-10

    def test_sigma_rows_pass_for_square(self):
        rows = sigma_audit_rows("0,0,1", 3, 0, trials=100)
        names = [r.bound_name for r in rows]
        assert "quadratic_opnorm[n=3]" in names and "variance_floor[n=3,d=2]" in names
        assert all(r.passed for r in rows)

    def test_variance_floor_equality_passes(self):
        # d = 1: every unit linear form has variance exactly 1 = 1/1!
        rows = [r for r in sigma_audit_rows("0,1", 3, 0, trials=50) if r.bound_name.startswith("variance_floor")]
        assert rows and rows[0].passed and rows[0].rhs == pytest.approx(1.0)


class TestRate:
    def test_bound_selection(self):
        c = ExperimentConfig(n=3)
        assert applicable_bound(c, Activation.parse("poly:0,0,1"), 16).theorem == "3.4"
        assert applicable_bound(c, Activation.parse("poly:1,0,1"), 16).theorem == "3.1"
        assert applicable_bound(c, Activation.relu(), 16).theorem == "5.1"

    def test_small_run(self):
        c = ExperimentConfig(seed=4, n=3, points=2, reps=64, k_grid=(4, 16, 64, 256), double_n=False)
        res = run_rate_experiment(c)
        assert [r["k"] for r in res.rows] == [4, 16, 64, 256]
        assert all(r["status"] == "ok" and r["estimate"] >= 0 for r in res.rows)
        assert res.fit is not None and res.fit.points == 4
        assert run_rate_experiment(c).rows == res.rows

    def test_workers_match_serial(self):
        c = ExperimentConfig(seed=4, n=3, points=2, reps=32, k_grid=(4, 8, 16, 32), double_n=False)
        assert run_rate_experiment(c.replace(workers=3)).rows == run_rate_experiment(c).rows

    def test_short_grid_skips_fit(self):
        res = run_rate_experiment(ExperimentConfig(seed=1, points=2, reps=16, k_grid=(4, 8), double_n=False))
        assert res.fit is None and res.notes


class TestCli:
    def run_twice(self, tmp_path, argv_for):
        outs = []
        for tag in ("one", "two"):
            d = tmp_path / tag
            d.mkdir()
            assert cli.main(argv_for(d)) == 0
            outs.append({p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
        assert outs[0] == outs[1] and outs[0]
        return outs[0]

    def test_coeffs(self, tmp_path):
        files = self.run_twice(tmp_path, lambda d: ["coeffs", "--activation", "relu", "--max-degree", "10", "--out", str(d / "c.csv")])
        rows = read_rows(tmp_path / "one" / "c.csv")
        assert {r["method"] for r in rows} == {"quadrature", "closed_form"}
        assert len(files) == 2

    def test_sigma(self, tmp_path):
        self.run_twice(tmp_path, lambda d: ["sigma", "--poly", "0,0,1", "--n", "3", "--seed", "1", "--out", str(d / "s.csv")])
        rows = read_rows(tmp_path / "one" / "s.csv")
        assert float(rows[-1]["cumulative_mass"]) == pytest.approx(1.0)

    def test_sample_and_distance(self, tmp_path):
        def argv(d):
            return ["sample", "--activation", "relu", "--k", "8", "--points", "3", "--reps", "40", "--seed", "2",
                    "--out", str(d / "m.csv")]

        self.run_twice(tmp_path, argv)
        a = tmp_path / "one" / "m.csv"
        assert cli.main(["sample", "--activation", "relu", "--gp", "--points", "3", "--reps", "40", "--seed", "2",
                         "--out", str(tmp_path / "gp.csv")]) == 0
        assert cli.read_marginals(a).shape == (40, 3)
        self.run_twice(tmp_path / "one", lambda d: ["distance", "--a", str(a), "--b", str(tmp_path / "gp.csv"),
                                                    "--bootstrap", "5", "--seed", "1", "--out", str(d / "e.json")])
        payload = json.loads((tmp_path / "one" / "one" / "e.json").read_text())
        assert payload["ci_low"] <= payload["value"] <= payload["ci_high"]
        assert len(payload["a_sha256"]) == 64

    def test_rate(self, tmp_path):
        cfg = tmp_path / "rate.cfg"
        cfg.write_text("seed = 3\npoints = 2\nreps = 32\nk_grid = 4,8,16,32\ndouble_n = false\n")
        self.run_twice(tmp_path, lambda d: ["rate", "--config", str(cfg), "--out", str(d / "r")])
        fit = json.loads((tmp_path / "one" / "r" / "rate_fit.json").read_text())
        assert fit["fit"]["points"] == 4

    def test_seed_required(self, tmp_path, capsys):
        assert cli.main(["sample", "--out", str(tmp_path / "m.csv")]) == 2
        assert "seed" in capsys.readouterr().err

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = blue\n")
        assert cli.main(["coeffs", "--config", str(cfg)]) == 2
