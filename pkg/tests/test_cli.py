import csv
import json
import math

import numpy as np
import pytest

from expsketch.cli import ExperimentConfig, main, parse_seeds
from expsketch.errors import ConfigError
from expsketch.generators import gen_matrix
from expsketch.linalg import write_mtx, write_vector


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_tight_example():
    A = gen_matrix("tight_example", 6, 3).toarray()
    assert np.array_equal(A[:3], np.eye(3)) and not A[3:].any()


def test_gen_gaussian_mean_abs():
    A = gen_matrix("gaussian", 10_000, 10, seed=1).toarray()
    assert np.mean(np.abs(A)) == pytest.approx(math.sqrt(2 / math.pi), rel=0.02)


def test_gen_sparse_bernoulli_nnz():
    A = gen_matrix("sparse_bernoulli", 5000, 20, density=0.1, seed=2)
    assert A.nnz == pytest.approx(0.1 * 5000 * 20, rel=0.05)
    assert set(np.unique(A.data)) <= {-1.0, 1.0}


def test_gen_heavy_tailed():
    A = gen_matrix("heavy_tailed_t2", 2000, 3, seed=3).toarray()
    assert np.abs(A).max() > 20


@pytest.mark.parametrize("density", [0.0, 1.5])
def test_gen_rejects_density(density):
    with pytest.raises(ConfigError):
        gen_matrix("sparse_bernoulli", 10, 2, density=density)


def test_gen_rejects_n_below_d():
    with pytest.raises(ConfigError):
        gen_matrix("gaussian", 2, 3)


def test_parse_seeds():
    assert parse_seeds("3") == [3]
    assert parse_seeds("0-3") == [0, 1, 2, 3]
    assert parse_seeds("1,5,9") == [1, 5, 9]


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(c_samp=0).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(seeds=[]).validate()


def test_embed_identity_all_ones(capsys, tmp_path):
    out = tmp_path / "embed.csv"
    code, _, _ = run(capsys, "embed", "--identity", "--n", "40", "--d", "3", "--n-dirs", "10", "--out", str(out))
    assert code == 0
    lines = out.read_text().splitlines()
    header = json.loads(lines[0][2:])
    assert header["config"]["identity"] and "master_seed" in header
    ratios = [float(r["ratio"]) for r in csv.DictReader(lines[1:])]
    assert len(ratios) == 13 and np.allclose(ratios, 1.0, rtol=1e-12)


def test_regress_zero_residual(capsys, tmp_path):
    rng = np.random.default_rng(0)
    M = rng.standard_normal((300, 3))
    b = M @ np.array([1.0, -2.0, 0.5])
    write_mtx(tmp_path / "M.mtx", M)
    write_vector(tmp_path / "b.txt", b)
    code, out, _ = run(capsys, "regress", "--p", "1.5", "--eps", "0.2", "--input", str(tmp_path / "M.mtx"),
                       "--rhs", str(tmp_path / "b.txt"), "--seed", "4")
    assert code == 0
    rep = json.loads(out)
    assert rep["master_seed"] == 4 and rep["config"]["p"] == 1.5
    assert rep["runs"][0]["cost"] <= 1e-9 * np.abs(b).sum()


def test_regress_multi_seed(capsys):
    code, out, _ = run(capsys, "regress", "--p", "3", "--n", "500", "--d", "4", "--seeds", "0-2")
    assert code == 0
    assert [r["seed"] for r in json.loads(out)["runs"]] == [0, 1, 2]


def test_dist_regress_outputs(capsys, tmp_path):
    out = tmp_path / "res" / "dist.json"
    code, _, _ = run(capsys, "dist-regress", "--p", "3", "--n", "600", "--d", "4", "--k", "3", "--out", str(out))
    assert code == 0
    rep = json.loads(out.read_text())
    rows = list(csv.DictReader(open(tmp_path / "res" / "dist.ledger.csv")))
    assert sum(int(r["words"]) for r in rows) == rep["ledger"]["total"]
    assert json.loads((tmp_path / "res" / "dist.trace.json").read_text())


def test_stress_tight(capsys):
    code, out, _ = run(capsys, "stress-tight", "--d", "16", "--n", "512", "--seeds", "0-9")
    assert code == 0
    rep = json.loads(out)
    assert len(rep["runs"]) == 10 and 0 <= rep["success_fraction"] <= 1


def test_verify_subset(capsys):
    code, out, err = run(capsys, "verify", "--checks", "max_stability,tail")
    assert code == 0
    rep = json.loads(out)
    assert rep["all_passed"] and len(rep["checks"]) == 2
    assert "[PASS]" in err


def test_config_file_and_flag_override(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"p": 3.0, "n": 400, "d": 3, "seed": 11}))
    code, out, _ = run(capsys, "regress", "--config", str(cfg), "--n", "500")
    rep = json.loads(out)
    assert code == 0 and rep["config"]["n"] == 500 and rep["config"]["p"] == 3.0 and rep["master_seed"] == 11


def test_env_seed_fallback(capsys, monkeypatch):
    monkeypatch.setenv("EXPSKETCH_SEED", "42")
    code, out, _ = run(capsys, "regress", "--p", "3", "--n", "300", "--d", "3")
    assert code == 0 and json.loads(out)["master_seed"] == 42
    code, out, _ = run(capsys, "regress", "--p", "3", "--n", "300", "--d", "3", "--seed", "1")
    assert json.loads(out)["master_seed"] == 1


def test_exit_code_config_error(capsys):
    code, _, err = run(capsys, "regress", "--eps", "2")
    assert code == 2
    assert json.loads(err)["error"] == "config_error"
    code, _, err = run(capsys, "embed", "--mode", "HighP", "--p", "1.5")
    assert code == 2


def test_exit_code_unknown_config_key(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, err = run(capsys, "verify", "--config", str(cfg))
    assert code == 2 and "bogus" in json.loads(err)["message"]


def test_exit_code_numeric(capsys, tmp_path):
    M = np.ones((50, 2))
    write_mtx(tmp_path / "M.mtx", M)
    write_vector(tmp_path / "b.txt", np.arange(50.0))
    code, _, err = run(capsys, "regress", "--p", "1", "--input", str(tmp_path / "M.mtx"),
                       "--rhs", str(tmp_path / "b.txt"))
    assert code == 3
    assert json.loads(err)["error"] == "rank_deficient"
