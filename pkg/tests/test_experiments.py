import hashlib
import math
import os

import numpy as np
import pytest

from stochograd.experiments import (SHEPP_LOGAN_ELLIPSES, ConfigError, ExperimentConfig, add_gaussian_noise,
                                    beer_lambert_noise, build_problem, compute_reference, gen_shepp_logan,
                                    gen_sparse_spikes, read_csv, read_raw, run_algorithm, run_experiment,
                                    spike_positions, write_csv, write_pgm, write_raw)
from stochograd.experiments.harness import metrics_rows
from stochograd.functionals import GroupL1, SeparableSum
from stochograd.linops import make_parallel_radon

# independent rasterisation, see tests/oracles/make_oracles.py
SHEPP_LOGAN_128_SHA256 = "ff15c4c1117c2107a6d33ecb216c2efaed7c5d29c7890790a7bd1d0dd87b5f23"
SHEPP_LOGAN_128_SUM = 2032.8
# exact E|out| for v = 0, I0 = 1e6, by summing the Poisson pmf
BEER_LAMBERT_V0_MEAN = 0.0007978848930336144
# exact mean |perturbation| on the 64x64, 120-angle sinogram scaled by 4/64, I0 = 5000
BEER_LAMBERT_CT_MEAN = 0.01363108154410708


# data generators

def test_spike_positions_small():
    assert spike_positions(10, 2).tolist() == [2, 7]
    x = gen_sparse_spikes(10, 2, seed=3)
    assert np.flatnonzero(x).tolist() == [2, 7]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_spikes_count_and_amplitudes(seed):
    x = gen_sparse_spikes(1000, 20, seed)
    nz = np.flatnonzero(x)
    assert nz.size == 20
    assert np.all(np.diff(nz) == 50)
    assert np.all((np.abs(x[nz]) >= 0.5) & (np.abs(x[nz]) <= 1.5))
    with pytest.raises(ValueError):
        gen_sparse_spikes(5, 6)


def test_shepp_logan_range_and_golden():
    img = gen_shepp_logan(128)
    assert img.min() >= 0.0 and img.max() <= 1.0
    digest = hashlib.sha256(np.ascontiguousarray(img, dtype="<f8").tobytes()).hexdigest()
    assert digest == SHEPP_LOGAN_128_SHA256
    assert img.sum() == pytest.approx(SHEPP_LOGAN_128_SUM, abs=1e-9)
    with pytest.raises(ValueError):
        gen_shepp_logan(8)


def test_shepp_logan_symmetric_subset_is_mirror_symmetric():
    sym = [e for e in SHEPP_LOGAN_ELLIPSES if e[3] == 0.0 and e[5] == 0.0]
    img = gen_shepp_logan(96, sym)
    assert img.sum() > 0
    np.testing.assert_allclose(img, img[:, ::-1], atol=1e-12)


def test_gaussian_noise_moments_and_reproducibility():
    v = np.linspace(0, 1, 100_000)
    assert np.array_equal(add_gaussian_noise(v, 0.0, 1), v)
    a = add_gaussian_noise(v, 0.2, 7)
    assert np.std(a - v) == pytest.approx(0.2, rel=0.03)
    assert a.tobytes() == add_gaussian_noise(v, 0.2, 7).tobytes()
    assert a.tobytes() != add_gaussian_noise(v, 0.2, 8).tobytes()


def test_beer_lambert_small_perturbation_at_zero():
    I0 = 1e6
    out = beer_lambert_noise(np.zeros(10_000), I0, seed=0)
    m = np.mean(np.abs(out))
    assert m <= 3 / math.sqrt(I0)
    assert m == pytest.approx(BEER_LAMBERT_V0_MEAN, rel=0.05)


def test_beer_lambert_clamp_keeps_outputs_finite():
    out = beer_lambert_noise(np.array([0.0, 30.0, 80.0, 500.0]), 50.0, seed=1)
    assert np.all(np.isfinite(out))
    assert out[-1] == pytest.approx(math.log(50.0))
    with pytest.raises(ValueError):
        beer_lambert_noise(np.array([-1.0]), 10.0)
    with pytest.raises(ValueError):
        beer_lambert_noise(np.array([1.0]), 0.0)


def test_beer_lambert_ct_mean_matches_exact_expectation():
    K = make_parallel_radon(64, 64, 120)
    v = (4.0 / 64) * K.apply(gen_shepp_logan(64).reshape(-1))
    out = beer_lambert_noise(v, 5000.0, seed=0)
    assert np.mean(np.abs(out - v)) == pytest.approx(BEER_LAMBERT_CT_MEAN, rel=0.03)


def test_ct_beer_lambert_dose_regimes():
    errs = []
    for I0 in (50.0, 250.0, 5000.0):
        cfg = ExperimentConfig(experiment="ct-shepp-logan", size=32, n_angles=60, noise="beer-lambert", I0=I0)
        p = build_problem(cfg)
        assert np.all(np.isfinite(p.data))
        clean = p.extras["operator"].apply(p.x_true)
        errs.append(np.mean(np.abs(p.data - clean)))
    assert errs[0] > errs[1] > errs[2]


# problem builders

def test_spikes_kappa_one_has_unit_lipschitz():
    p = build_problem(ExperimentConfig(d=100, kappa=1))
    assert p.h.lipschitz == 1.0
    assert p.partitioned.smoothness.L == 1.0
    assert p.extras["mu"] == 0.5 * np.max(np.abs(p.extras["operator"].adjoint(p.data)))
    assert np.array_equal(p.x0, np.zeros(100))


def test_ct_terms_sum_to_h():
    p = build_problem(ExperimentConfig(experiment="ct-shepp-logan", n_subsets=8))
    pp = p.partitioned
    assert pp.n == 8
    rng = np.random.Generator(np.random.PCG64(0))
    for _ in range(3):
        x = rng.uniform(0, 1, pp.d)
        assert sum(pp.term_value(i, x) for i in range(8)) == pytest.approx(p.h(x), rel=1e-10)


def test_tgv_builds_block_operator_and_two_block_f():
    p = build_problem(ExperimentConfig(experiment="denoise-tgv", size=16))
    f, A, g = p.pd
    hw = 16 * 16
    assert isinstance(f, SeparableSum)
    assert all(isinstance(b, GroupL1) for b in f.terms)
    assert f.sizes == [2 * hw, 4 * hw]
    assert A.domain.size == 3 * hw and A.codomain.size == 6 * hw
    assert p.partitioned is None and p.h is None


def test_unknown_and_invalid_keys_are_listed():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"kapa": 5, "seed": 1})
    assert err.value.keys == ["kapa"]
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"kappa": 4, "passes": -1})
    assert sorted(err.value.keys) == ["kappa", "passes"]


# references

def test_reference_recovers_quadratic_solution():
    p = build_problem(ExperimentConfig(experiment="tridiag-ls", reference_iters=200_000, reference_tol=1e-13))
    ref = compute_reference(p)
    assert np.linalg.norm(ref.x - p.x_true) / np.linalg.norm(p.x_true) <= 1e-8


def test_reference_stable_under_doubled_budget():
    p = build_problem(ExperimentConfig(d=200, kappa=5, reference_iters=20_000, reference_tol=1e-12))
    a = compute_reference(p)
    b = compute_reference(p, budget=40_000)
    assert abs(a.phi - b.phi) <= 1e-9
    c = compute_reference(build_problem(ExperimentConfig(d=200, kappa=5, reference_iters=20_000,
                                                         reference_tol=1e-12)))
    assert np.array_equal(a.x, c.x)


# solvers on the CT problem (no reference needed)

@pytest.fixture(scope="module")
def ct64():
    return build_problem(ExperimentConfig(experiment="ct-shepp-logan", n_subsets=10))


def test_sgd_decay_schedule_decreases_ct_objective(ct64):
    cfg = ExperimentConfig(experiment="ct-shepp-logan", n_subsets=10, algorithm="sgd", schedule="sgd-decay",
                           passes=20)
    tr = run_algorithm(ct64, cfg)
    obj = tr.objectives
    assert tr.final().passes == 20
    assert obj[-1] < obj[1] < obj[0]
    assert obj[-1] <= np.min(obj[:10])


def test_spdhg_beats_pgd_at_ten_passes(ct64):
    base = dict(experiment="ct-shepp-logan", n_subsets=10, passes=10)
    spdhg = run_algorithm(ct64, ExperimentConfig(algorithm="spdhg", **base))
    pgd = run_algorithm(ct64, ExperimentConfig(algorithm="pgd", **base))
    assert spdhg.final().objective < pgd.final().objective


def test_adam_stays_finite_on_ct(ct64):
    tr = run_algorithm(ct64, ExperimentConfig(experiment="ct-shepp-logan", n_subsets=10, algorithm="adam",
                                              passes=10))
    assert not tr.diverged and np.all(np.isfinite(tr.x))
    assert tr.final().objective < tr.objectives[0]


# harness and persistence

def test_run_experiment_writes_outputs_and_is_deterministic(tmp_path):
    cfg = ExperimentConfig(experiment="tridiag-ls", algorithm="saga", passes=5, seed=3)
    a = run_experiment(cfg, out_dir=tmp_path / "a")
    run_experiment(cfg, out_dir=tmp_path / "b")
    ca = (tmp_path / "a" / "saga.csv").read_bytes()
    assert ca == (tmp_path / "b" / "saga.csv").read_bytes()
    for name in ("saga.pgm", "saga.f64", "saga.f64.json", "saga.config.json"):
        assert (tmp_path / "a" / name).exists()
    rows = read_csv(tmp_path / "a" / "saga.csv")
    assert len(rows) == len(a.rows)
    # table initialisation is charged one pass
    assert rows[0]["data_passes"] == "1.0" and rows[-1]["data_passes"] == "5.0"
    assert all(float(r["subopt"]) >= -1e-8 for r in rows)


def test_csv_round_trip(tmp_path):
    p = build_problem(ExperimentConfig(experiment="tridiag-ls"))
    cfg = ExperimentConfig(experiment="tridiag-ls", algorithm="gd", passes=3)
    rows = metrics_rows(cfg, run_algorithm(p, cfg))
    write_csv(tmp_path / "m.csv", rows)
    text = (tmp_path / "m.csv").read_text().splitlines()
    assert text[0] == "schema=1"
    assert text[1] == "experiment,algorithm,seed,k,data_passes,seconds,objective,subopt,rel_dist"
    back = read_csv(tmp_path / "m.csv")
    assert [float(r["objective"]) for r in back] == [r.objective for r in rows]
    assert [int(r["k"]) for r in back] == [r.k for r in rows]
    (tmp_path / "bad.csv").write_text("a,b\n")
    with pytest.raises(ValueError):
        read_csv(tmp_path / "bad.csv")


def test_pgm_and_raw_round_trip(tmp_path):
    img = np.arange(12, dtype=float).reshape(3, 4)
    write_pgm(tmp_path / "i.pgm", img)
    raw = (tmp_path / "i.pgm").read_bytes()
    header = b"P5\n4 3\n65535\n"
    assert raw.startswith(header)
    pix = np.frombuffer(raw[len(header):], dtype=">u2").reshape(3, 4)
    assert pix[0, 0] == 0 and pix[-1, -1] == 65535
    assert np.all(np.diff(pix.reshape(-1).astype(int)) > 0)
    write_raw(tmp_path / "i.f64", img)
    assert os.path.getsize(tmp_path / "i.f64") == 12 * 8
    assert np.array_equal(read_raw(tmp_path / "i.f64"), img)
