import numpy as np
import pytest

from coarsened import CEMMethod, KMeansMethod
from coarsened.errors import ConfigError
from coarsened.simulation import (ConfounderLaw, LinearSurface, PiecewiseSurface, SimConfig,
                                  aligned_cem, config_from_dict, generate, load_scenario,
                                  normality_check, run_mc, scenario, sigma2_oracle, true_ace)

G2 = ConfounderLaw("gaussian")


def test_identical_surfaces_zero_effect():
    cfg = SimConfig("x", 100, 2, G2, LinearSurface(1.0, (1.0, 2.0), 1.0, (1.0, 2.0)))
    assert generate(cfg, 1)[1] == 0.0


def test_constant_shift():
    cfg = SimConfig("x", 100, 2, G2, LinearSurface(0.0, (1.0, 2.0), 2.0, (1.0, 2.0)))
    assert generate(cfg, 1)[1] == 2.0
    assert scenario("constant-effect").surface.true_tau(G2, 2) == 2.0


def test_piecewise_analytic_sum():
    surf = PiecewiseSurface(((0.0,), (0.5,)), (0.0, 1.0, 2.0, 3.0), (1.0, 2.5, 2.5, 4.0))
    cfg = SimConfig("x", 100, 2, G2, surf)
    probs = surf.cell_probs(G2)
    assert probs.sum() == pytest.approx(1.0)
    assert true_ace(cfg) == pytest.approx(float(np.dot(probs, [1.0, 1.5, 0.5, 1.0])))
    x = G2.draw(np.random.default_rng(0), 400_000, 2)
    mc = np.mean(surf.mu(x, 1) - surf.mu(x, 0))
    assert true_ace(cfg) == pytest.approx(mc, abs=5e-3)


def test_generate_rep_deterministic():
    cfg = scenario("smooth-linear", 200)
    a, _ = generate(cfg, 42)
    b, _ = generate(cfg, 42)
    c, _ = generate(cfg, 43)
    assert (a.y == b.y).all() and (a.x == b.x).all() and (a.t == b.t).all()
    assert not (a.y == c.y).all()


def test_positivity_bounds():
    cfg = SimConfig("x", 100, 1, G2, LinearSurface(0.0, (1.0,), 0.0, (1.0,)), 0.0, (50.0,))
    e = cfg.propensity(np.array([[-10.0], [10.0]]))
    assert e[0] == pytest.approx(0.01) and e[1] == pytest.approx(0.99)


def test_invalid_configs():
    with pytest.raises(ConfigError):
        scenario("nope")
    with pytest.raises(ConfigError):
        SimConfig("x", 2, 1, G2, LinearSurface(0.0, (1.0,), 0.0, (1.0,)))


def test_scenario_file_round_trip(tmp_path):
    cfg = scenario("aligned-piecewise", 300)
    import yaml

    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(cfg.to_dict()))
    again = load_scenario(str(p))
    assert again == cfg
    assert config_from_dict(cfg.to_dict()) == cfg


def test_mixed_binary_law():
    law = ConfounderLaw("mixed_with_binary", n_binary=1)
    x = law.draw(np.random.default_rng(0), 500, 3)
    assert set(np.unique(x[:, 0])) == {0.0, 1.0}
    assert np.unique(x[:, 1]).size == 500
    cfg = SimConfig("m", 50, 3, law, LinearSurface(0.0, (1.0,), 1.0, (1.0,)))
    assert [s.kind for s in cfg.specs()] == ["categorical", "continuous", "continuous"]


def test_sigma2_oracle_linear():
    cfg = scenario("smooth-linear")
    # mu1 - mu0 = 1 + 0.5 x1 with x1 ~ N(0,1)
    assert sigma2_oracle(cfg) == pytest.approx(0.25, rel=0.02)


def test_normality_check():
    rng = np.random.default_rng(0)
    z = rng.standard_normal(2000)
    assert normality_check(z)[1]
    assert not normality_check(z + 1)[1]
    with pytest.raises(ConfigError):
        normality_check(z[:100])


def test_aligned_cem_rules():
    m = aligned_cem(scenario("aligned-piecewise"))
    assert isinstance(m, CEMMethod) and set(m.rules) == {"x1", "x2"}


def test_run_mc_small_and_deterministic():
    cfg = scenario("constant-effect", 300)
    a = run_mc(cfg, KMeansMethod(restarts=1), reps=20, seed=3, k=4)
    b = run_mc(cfg, KMeansMethod(restarts=1), reps=20, seed=3, k=4)
    assert a.to_dict() == b.to_dict()
    assert 0 <= a.coverage <= 1 and a.failed == 0
    assert a.ks_stat is None


def test_run_mc_worker_independent():
    cfg = scenario("null", 200)
    a = run_mc(cfg, KMeansMethod(restarts=1), reps=8, seed=1, k=3, workers=1)
    b = run_mc(cfg, KMeansMethod(restarts=1), reps=8, seed=1, k=3, workers=2)
    assert a.to_dict() == b.to_dict()


def test_run_mc_grid_curve():
    cfg = scenario("smooth-linear", 300)
    rep = run_mc(cfg, KMeansMethod(restarts=1), reps=10, seed=2, grid=(2, 4, 8))
    assert [row["K"] for row in rep.per_J] == [2, 4, 8]
    assert rep.corrected is not None
    rows = rep.per_rep_rows()
    assert "tau_K4" in rows[0]


def test_aligned_cem_constant_effect_unbiased():
    cfg = SimConfig("aligned-shift", 1000, 2, G2,
                    PiecewiseSurface(((0.0,), (0.5,)), (0.0, 1.0, 2.0, 3.0), (2.0, 3.0, 4.0, 5.0)),
                    -0.2, (0.8, 0.8))
    rep = run_mc(cfg, aligned_cem(cfg), reps=200, seed=4)
    assert rep.true_tau == 2.0
    assert abs(rep.bias) < 3 * rep.mc_se
