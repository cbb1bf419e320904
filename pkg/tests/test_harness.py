import json
import pathlib

import numpy as np
import pytest

from altproj.dense import RngSpec
from altproj.harness import (
    CampaignConfig,
    build_instance,
    downscale_mean,
    emit_plots,
    generate_gaussian,
    load_image_matrix,
    load_image_problem,
    metric_e_mse,
    metric_e_omega,
    observation_count,
    read_pgm,
    read_problem_dir,
    read_summary_csv,
    run_campaign,
    synthetic_scene,
    truncate_rank,
    write_pgm,
    write_problem_dir,
)
from altproj.projections import ObservedData
from altproj.solvers import read_trace_csv

TINY = dict(family="gaussian", n1=24, n2=20, rank=2, oversampling=2.0,
            methods=("apm", "rapm", "irapm"), zetas=(1e-3,), seeds=2,
            max_iter=4)


# ---------------------------------------------------------------------------
# instance generation
# ---------------------------------------------------------------------------

def test_observation_count_values():
    assert observation_count(512, 512, 30, 2.6) == 77532
    assert observation_count(4, 4, 4, 1.0) == 16


def test_generate_gaussian_reproducible_and_planted():
    a = generate_gaussian(16, 12, 3, 2.0, RngSpec(5))
    b = generate_gaussian(16, 12, 3, 2.0, RngSpec(5))
    assert np.array_equal(a.ground_truth, b.ground_truth)
    assert np.array_equal(a.observed.values, b.observed.values)
    assert a.observed.count == observation_count(16, 12, 3, 2.0)
    s = np.linalg.svd(a.ground_truth, compute_uv=False)
    assert s[3] <= 1e-10 * s[0]  # rank exactly 3
    c = generate_gaussian(16, 12, 3, 2.0, RngSpec(6))
    assert not np.array_equal(a.observed.values, c.observed.values)


def test_mask_has_no_duplicates():
    inst = generate_gaussian(6, 5, 2, 1.5, RngSpec(1))
    keys = inst.observed.rows * 5 + inst.observed.cols
    assert len(np.unique(keys)) == inst.observed.count
    assert inst.observed.rows.max() < 6
    assert inst.observed.cols.max() < 5


def test_observed_values_match_truth():
    inst = generate_gaussian(10, 9, 2, 2.0, RngSpec(2))
    m = inst.ground_truth
    assert np.array_equal(inst.observed.values,
                          m[inst.observed.rows, inst.observed.cols])


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def test_pgm_round_trip_binary_and_ascii(tmp_path):
    img = synthetic_scene(12, 16)
    p5 = tmp_path / "img5.pgm"
    write_pgm(p5, img, binary=True)
    p2 = tmp_path / "img2.pgm"
    write_pgm(p2, img, binary=False)
    a = read_pgm(p5)
    b = read_pgm(p2)
    assert np.array_equal(a, b)  # the two encodings carry the same samples
    assert np.array_equal(a, img)  # scene is already 8-bit quantized


def test_pgm_sixteen_bit(tmp_path):
    img = np.linspace(0.0, 1.0, 12).reshape(3, 4)
    path = tmp_path / "deep.pgm"
    write_pgm(path, img, maxval=65535)
    back = read_pgm(path)
    assert np.max(np.abs(back - img)) <= 0.5 / 65535


def test_pgm_header_comments_and_errors(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P2\n# a comment\n2 2\n# another\n255\n0 128\n255 64\n")
    img = read_pgm(path)
    assert img.shape == (2, 2)
    assert img[0, 1] == pytest.approx(128 / 255)
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P7\n2 2\n255\n\x00\x00\x00\x00")
    with pytest.raises(ValueError):
        read_pgm(bad)


def test_load_image_matrix_csv_not_rescaled(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("2.0,2.0\n2.0,2.0\n")
    m = load_image_matrix(path)
    assert np.array_equal(m, np.full((2, 2), 2.0))  # no maxval division


def test_truncate_rank_constant_image():
    c = 0.5
    m = truncate_rank(np.full((6, 8), c), 1)
    s = np.linalg.svd(m, compute_uv=False)
    assert s[0] == pytest.approx(c * np.sqrt(6 * 8))
    assert np.allclose(m, c)


def test_load_image_problem_identity_csv(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("1.0,0.0\n0.0,1.0\n")
    inst = load_image_problem(path, 1, 1.0, RngSpec(3))
    assert np.linalg.norm(inst.ground_truth) == pytest.approx(1.0)


def test_synthetic_scene_properties():
    a = synthetic_scene(64, 48)
    assert a.shape == (64, 48)
    assert np.array_equal(a, synthetic_scene(64, 48))
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert np.array_equal(a, np.round(a * 255) / 255)  # 8-bit quantized
    s = np.linalg.svd(a, compute_uv=False)
    assert np.sum(s > 1e-9 * s[0]) > 40  # genuinely high-rank content


def test_downscale_mean():
    img = np.arange(16.0).reshape(4, 4)
    got = downscale_mean(img, 2)
    want = np.array([[2.5, 4.5], [10.5, 12.5]])
    assert np.array_equal(got, want)
    with pytest.raises(ValueError):
        downscale_mean(img, 3)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_metric_e_omega_cases():
    obs = ObservedData.from_entries(2, 2, [0, 1], [0, 1], [3.0, 4.0])
    y = np.array([[3.0, 9.0], [9.0, 4.0]])
    assert metric_e_omega(y, obs) == 0.0
    assert metric_e_omega(np.zeros((2, 2)), obs) == 1.0
    y_off = np.array([[8.0, 0.0], [0.0, 4.0]])  # off by 5 at the 3-entry
    assert metric_e_omega(y_off, obs) == pytest.approx(1.0)
    zero_obs = ObservedData.from_entries(2, 2, [0], [0], [0.0])
    with pytest.raises(ValueError):
        metric_e_omega(y, zero_obs)


def test_metric_e_mse_cases():
    m = np.zeros((2, 2))
    assert metric_e_mse(m + 1.0, m) == pytest.approx(1.0)
    one_off = np.array([[2.0, 0.0], [0.0, 0.0]])
    assert metric_e_mse(one_off, m) == pytest.approx(1.0)  # sqrt(4/4)
    assert metric_e_mse(m, m) == 0.0


# ---------------------------------------------------------------------------
# problem directories
# ---------------------------------------------------------------------------

def test_problem_dir_round_trip(tmp_path):
    inst = generate_gaussian(14, 11, 2, 2.0, RngSpec(4))
    out = tmp_path / "prob"
    write_problem_dir(out, inst)
    assert sorted(p.name for p in out.iterdir()) == \
        ["instance.json", "observed.csv", "truth.dmat"]
    back = read_problem_dir(out)
    assert np.array_equal(back.ground_truth, inst.ground_truth)
    assert np.array_equal(back.observed.values, inst.observed.values)
    assert back.rank == 2 and back.oversampling == 2.0
    assert back.provenance == inst.provenance


# ---------------------------------------------------------------------------
# campaigns
# ---------------------------------------------------------------------------

def run_tiny(tmp_path, name, **overrides):
    cfg = CampaignConfig(**{**TINY, "out_dir": str(tmp_path / name), **overrides})
    return cfg, run_campaign(cfg)


def test_campaign_outputs_and_summary(tmp_path):
    cfg, summary = run_tiny(tmp_path, "c1")
    out = pathlib.Path(cfg.out_dir)
    names = sorted(p.name for p in out.iterdir())
    assert "summary.csv" in names and "manifest.json" in names
    for kind in ("e_omega_band", "cost_ratio_vs_apm", "krylov_dims"):
        assert f"fig_{kind}.svg" in names
    assert "trace_apm_na_1.csv" in names
    assert "trace_irapm_0.001_2.csv" in names
    assert not summary.failures
    rows = read_summary_csv(out / "summary.csv")
    assert [(r["method"], r["zeta"]) for r in rows] == \
        [("apm", None), ("rapm", None), ("irapm", 1e-3)]
    for srow, frow in zip(summary.rows, rows):
        assert srow.n_runs == 2
        assert frow["e_mse_std"] == srow.e_mse_std


def test_campaign_cost_recompute_from_traces(tmp_path):
    cfg, summary = run_tiny(tmp_path, "c2")
    out = pathlib.Path(cfg.out_dir)
    for row in summary.rows:
        label = "na" if row.zeta is None else f"{row.zeta:g}"
        costs = []
        for seed in (1, 2):
            _, rows = read_trace_csv(out / f"trace_{row.method}_{label}_{seed}.csv")
            recomputed = sum(r["ell_bar"] - cfg.rank for r in rows)
            assert recomputed == rows[-1]["cost"]
            costs.append(rows[-1]["cost"])
        assert row.cost == pytest.approx(np.mean(costs))


def test_campaign_final_e_omega_matches_trace(tmp_path):
    cfg, _ = run_tiny(tmp_path, "c3", methods=("apm",), seeds=1)
    out = pathlib.Path(cfg.out_dir)
    _, rows = read_trace_csv(out / "trace_apm_na_1.csv")
    inst = build_instance(cfg, 1)
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["n1"] == 24
    assert rows[-1]["e_omega"] > 0.0


def test_campaign_rerun_byte_identical(tmp_path):
    cfg1, _ = run_tiny(tmp_path, "d1")
    cfg2, _ = run_tiny(tmp_path, "d2")
    out1, out2 = pathlib.Path(cfg1.out_dir), pathlib.Path(cfg2.out_dir)
    for p in sorted(out1.iterdir()):
        assert p.read_bytes() == (out2 / p.name).read_bytes(), p.name


def test_campaign_parallel_matches_serial(tmp_path):
    cfg1, _ = run_tiny(tmp_path, "e1", jobs=1)
    cfg2, _ = run_tiny(tmp_path, "e2", jobs=2)
    for p in sorted(pathlib.Path(cfg1.out_dir).iterdir()):
        assert p.read_bytes() == (pathlib.Path(cfg2.out_dir) / p.name).read_bytes()


def test_campaign_single_seed_std_sentinel(tmp_path):
    cfg, summary = run_tiny(tmp_path, "f1", seeds=1, methods=("rapm",))
    assert summary.rows[0].e_mse_std is None
    text = (pathlib.Path(cfg.out_dir) / "summary.csv").read_text()
    line = text.splitlines()[1]
    assert line.split(",")[4] == ""  # empty std cell


def test_campaign_cell_failure_is_isolated(tmp_path, monkeypatch):
    import altproj.harness as harness
    real = harness._run_cell

    def flaky(inst, config):
        if config.variant == "rapm":
            raise RuntimeError("synthetic cell failure")
        return real(inst, config)

    monkeypatch.setattr(harness, "_run_cell", flaky)
    cfg, summary = run_tiny(tmp_path, "g1")
    assert len(summary.failures) == 2  # both rapm seeds
    assert all("rapm" in name for name, _ in summary.failures)
    ok_methods = {r.method for r in summary.rows if r.e_omega is not None}
    assert ok_methods == {"apm", "irapm"}
    rapm_row = [r for r in summary.rows if r.method == "rapm"][0]
    assert rapm_row.e_omega is None and rapm_row.n_runs == 0
    man = json.loads((pathlib.Path(cfg.out_dir) / "manifest.json").read_text())
    failed = [c for c in man["cells"] if c["status"] == "failed"]
    assert len(failed) == 2 and "synthetic cell failure" in failed[0]["error"]


def test_campaign_image_family(tmp_path):
    scene = tmp_path / "scene.pgm"
    write_pgm(scene, synthetic_scene(24, 24))
    cfg = CampaignConfig(family="image", n1=24, n2=24, rank=3, oversampling=2.0,
                         methods=("rapm", "irapm"), zetas=(1e-3,), seeds=1,
                         max_iter=3, image=str(scene),
                         out_dir=str(tmp_path / "img_run"))
    summary = run_campaign(cfg)
    assert not summary.failures
    inst = build_instance(cfg, 1)
    s = np.linalg.svd(inst.ground_truth, compute_uv=False)
    assert s[3] <= 1e-10 * s[0]  # truth truncated to the requested rank


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def collect_traces():
    from altproj.harness import STREAM_LANCZOS
    from altproj.solvers import SolverConfig, run

    inst = generate_gaussian(24, 20, 2, 2.0, RngSpec(1))
    traces = []
    for variant, extra in (("apm", {}), ("rapm", {}), ("irapm", {"zeta": 1e-3})):
        cfg = SolverConfig(variant=variant, rank=2, max_iter=4,
                           rng=RngSpec(1, STREAM_LANCZOS), **extra)
        traces.append(run(inst.observed, cfg))
    return traces


def test_emit_plots_kinds_and_determinism(tmp_path):
    traces = collect_traces()
    for kind in ("e_omega_band", "cost_ratio_vs_apm", "krylov_dims"):
        p1 = tmp_path / f"{kind}_a.svg"
        p2 = tmp_path / f"{kind}_b.svg"
        emit_plots(traces, kind, p1)
        emit_plots(traces, kind, p2)
        body = p1.read_bytes()
        assert body == p2.read_bytes()
        assert b"<svg" in body
    with pytest.raises(ValueError):
        emit_plots(traces, "histogram", tmp_path / "x.svg")


def test_cost_ratio_requires_apm(tmp_path):
    traces = [t for t in collect_traces() if t.config.variant != "apm"]
    with pytest.raises(ValueError):
        emit_plots(traces, "cost_ratio_vs_apm", tmp_path / "y.svg")
