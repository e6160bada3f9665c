import csv
import json
from pathlib import Path

import numpy as np
import pytest

from wasscc.certify import Certificate
from wasscc.cli import main
from wasscc.config import ConfigError, build_portfolio, build_production, parse_config
from wasscc.individual import read_allocation_csv
from wasscc.joint import random_production_instance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def fmt_vec(v):
    return ", ".join(repr(float(a)) for a in v)


def fmt_mat(M):
    return "\n".join("    " + fmt_vec(row) for row in M)


class TestParser:
    def test_minimal_portfolio(self):
        cfg = parse_config(
            "[portfolio]\nmean_returns = 1.01, 1.1\ncovariance =\n  0.0009, 0\n  0, 0.09\n"
            "target_return = 1.0\nepsilon = 0.15\ndelta = 0.005\n"
        )
        inst = build_portfolio(cfg)
        np.testing.assert_array_equal(inst.mean_returns, [1.01, 1.1])
        np.testing.assert_array_equal(inst.covariance, np.diag([0.0009, 0.09]))
        assert inst.amb.epsilon == 0.15 and inst.amb.delta == 0.005 and inst.target_return == 1.0
        assert inst.risk_free is None

    def test_domain_violation_names_key_and_line(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[portfolio]\ntarget_return = 1.0\nepsilon = 1.5\n")
        assert any("line 3" in e and "epsilon" in e for e in exc.value.errors)

    def test_all_errors_collected(self):
        text = "[portfolio]\nepsilon = 1.5\nbogus = 3\ndelta = abc\n[nowhere]\nx = 1\n"
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        lines = " ".join(exc.value.errors)
        for n in ("line 2", "line 3", "line 4", "line 5"):
            assert n in lines
        assert len(exc.value.errors) >= 4

    def test_overrides(self):
        cfg = parse_config("[portfolio]\nepsilon = 0.15\n", ["portfolio.delta=0.01", "run.seed=4"])
        assert cfg.get("portfolio", "delta") == 0.01 and cfg.get("run", "seed") == 4
        with pytest.raises(ConfigError) as exc:
            parse_config("", ["portfolio.epsilon=2"])
        assert "override" in exc.value.errors[0]
        with pytest.raises(ConfigError):
            parse_config("", ["nodot"])

    def test_random_production_round_trip(self):
        ref = random_production_instance(7283)
        text = (
            f"[production]\ncoverage =\n{fmt_mat(ref.T)}\ncost = {fmt_vec(ref.cost)}\ncapacity = 200\n"
            f"mu = {fmt_vec(ref.mu)}\nsigma = {fmt_vec(ref.sigma)}\nepsilon = 0.15\ndelta = 0\n"
        )
        got = build_production(parse_config(text))
        for name in ("T", "cost", "mu", "sigma"):
            np.testing.assert_array_equal(getattr(got, name), getattr(ref, name))
        assert got.capacity == ref.capacity and got.amb == ref.amb
        preset = build_production(parse_config((CONFIGS / "production_random.cfg").read_text(), ["production.delta=0"]))
        np.testing.assert_array_equal(preset.T, ref.T)
        np.testing.assert_array_equal(preset.mu, ref.mu)

    def test_shipped_configs_parse(self):
        for path in CONFIGS.glob("*.cfg"):
            parse_config(path.read_text())


def run(tmp_path, command, config, *sets, name="out"):
    out = str(tmp_path / name)
    args = [command, "-c", str(config), "-o", out]
    for s in sets:
        args += ["--set", s]
    return main(args), out


class TestCommands:
    def test_watershed_csv(self, tmp_path):
        code, out = run(tmp_path, "watershed", CONFIGS / "watershed.cfg")
        assert code == 0
        rows = list(csv.reader(open(out)))
        assert rows[0] == ["epsi", "delta"] and len(rows) == 51
        d = [float(r[1]) for r in rows[1:]]
        assert all(a > b for a, b in zip(d, d[1:]))
        meta = json.loads(Path(out + ".meta").read_text())
        assert meta["status"] == "ok" and meta["seed"] == 0 and "watershed" in meta["parameters"]

    def test_coeff_csv(self, tmp_path):
        code, out = run(tmp_path, "coeff", CONFIGS / "coeff.cfg")
        assert code == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 6
        for r in rows:
            assert float(r["c_pess"]) >= float(r["nominal"]) >= float(r["c_opt"])

    def test_byte_identical_reruns(self, tmp_path):
        a = run(tmp_path, "envelope", CONFIGS / "production_small.cfg", name="a")[1]
        b = run(tmp_path, "envelope", CONFIGS / "production_small.cfg", name="b")[1]
        assert Path(a).read_bytes() == Path(b).read_bytes()
        meta_a = json.loads(Path(a + ".meta").read_text())
        meta_b = json.loads(Path(b + ".meta").read_text())
        assert meta_a == meta_b
        rows = list(csv.DictReader(open(a)))
        r = [float(x["radius"]) for x in rows]
        assert all(y >= x - 1e-7 for x, y in zip(r, r[1:]))

    def test_portfolio_zero_radius_then_certify(self, tmp_path):
        code, alloc = run(tmp_path, "portfolio", CONFIGS / "portfolio_market.cfg", "portfolio.delta=0",
                          "portfolio.mode=pessimistic", name="alloc.csv")
        assert code == 0
        x = read_allocation_csv(alloc)
        assert x.size == 11
        meta = json.loads(Path(alloc + ".meta").read_text())
        assert meta["result"]["columns"][0] == "F"
        cfg = tmp_path / "cert.cfg"
        cfg.write_text(
            (CONFIGS / "portfolio_market.cfg").read_text()
            + f"\n[certify]\ninstance = portfolio\nmode = pessimistic\nallocation = {alloc}\nn_samples = 20000\n"
        )
        code, out = run(tmp_path, "certify", cfg, "portfolio.delta=0", name="cert.txt")
        assert code == 0
        cert = Certificate.from_record(Path(out).read_text())
        assert cert.verdict == "pass"

    def test_small_portfolio_and_certify(self, tmp_path):
        code, alloc = run(tmp_path, "portfolio", CONFIGS / "portfolio_small.cfg", name="a.csv")
        assert code == 0
        code, out = run(tmp_path, "certify", CONFIGS / "portfolio_small.cfg", f"certify.allocation={alloc}", name="c.txt")
        assert code in (0, 2)
        Certificate.from_record(Path(out).read_text())

    def test_solve_pp(self, tmp_path):
        code, out = run(tmp_path, "solve-pp", CONFIGS / "production_small.cfg")
        assert code == 0
        rows = list(csv.reader(open(out)))
        assert rows[0] == ["budget", "radius", "x1", "x2", "x3"]
        assert float(rows[1][1]) >= 0.5

    def test_exit_code_two(self, tmp_path):
        code, out = run(tmp_path, "portfolio", CONFIGS / "portfolio_small.cfg", "portfolio.target_return=1.5")
        assert code == 2
        assert json.loads(Path(out + ".meta").read_text())["status"] == "infeasible"
        code, _ = run(tmp_path, "solve-pp", CONFIGS / "production_small.cfg", "production.delta=1e6", name="pp")
        assert code == 2
        code, _ = run(tmp_path, "certify", CONFIGS / "production_small.cfg", "certify.x=0,0,0", name="cc")
        assert code == 2

    def test_exit_code_one(self, tmp_path, capsys):
        code, out = run(tmp_path, "portfolio", CONFIGS / "portfolio_small.cfg", "portfolio.epsilon=1.5")
        assert code == 1
        assert "epsilon" in capsys.readouterr().err
        assert json.loads(Path(out + ".meta").read_text())["status"] == "error"
        assert main(["portfolio", "-c", str(tmp_path / "missing.cfg"), "-o", str(tmp_path / "o")]) == 1
        assert main(["nonsense", "-c", "x", "-o", "y"]) == 1
        code, _ = run(tmp_path, "portfolio", CONFIGS / "portfolio_small.cfg", "portfolio.epsilon=0.5",
                      "portfolio.delta=0.01", "portfolio.mode=optimistic", name="nc")
        assert code == 1
