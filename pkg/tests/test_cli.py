import json
import os

import numpy as np
import pytest

from cli import main
from config import AppConfig, get_data_path
from modules.viewing import eccentricity_field
from utils.data_loader import DataManager, ReportDocument, VideoReportDocument
from utils.image_io import read_raster, write_gray
from tests.conftest import make_natural


TWO_VARIANTS = [
    {'id': 0, 'name': 'bicubic', 'cost_flops': 1.0, 't_hat': [0.95, 0.45, 0.10]},
    {'id': 1, 'name': 'full', 'cost_flops': 4.0, 't_hat': [0.99, 0.93, 0.80], 'baseline_full': True},
]


def write_config(tmp_path, **overrides):
    cfg = {
        'viewing': get_data_path(AppConfig.DEFAULT_VIEWING_FILE),
        'variants': TWO_VARIANTS,
        'patch_size': 16,
    }
    cfg.update(overrides)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture
def corpus_dir(tmp_path):
    directory = tmp_path / "corpus"
    for seed in range(2):
        write_gray(str(directory / f"img{seed}.png"), make_natural(seed, shape=(64, 64)))
    return directory


def test_estimate_identity_curve(tmp_path, corpus_dir):
    out = tmp_path / "curve.json"
    code = main(["--quiet", "estimate-attenuation", "--corpus", str(corpus_dir), "--op", "identity",
                 "--out", str(out)])
    assert code == 0
    curve = DataManager.load_curve(str(out))
    np.testing.assert_allclose(curve.samples[curve.valid], 1.0)
    assert curve.fit is not None
    assert not curve.fit.coarse


def test_estimate_needs_operator(tmp_path, corpus_dir):
    code = main(["--quiet", "estimate-attenuation", "--corpus", str(corpus_dir), "--out", str(tmp_path / "c.json")])
    assert code == 2


def test_estimate_pairs_size_mismatch(tmp_path):
    write_gray(str(tmp_path / "ref.png"), np.zeros((32, 32)))
    write_gray(str(tmp_path / "rec.png"), np.zeros((32, 16)))
    (tmp_path / "pairs.txt").write_text("ref.png rec.png\n")
    code = main(["--quiet", "estimate-attenuation", "--pairs", str(tmp_path / "pairs.txt"),
                 "--out", str(tmp_path / "c.json")])
    assert code == 2


def test_fit_curve_and_make_profiles(tmp_path, corpus_dir):
    identity = tmp_path / "identity.json"
    blurred = tmp_path / "blur.json"
    assert main(["--quiet", "estimate-attenuation", "--corpus", str(corpus_dir), "--op", "identity",
                 "--out", str(identity)]) == 0
    assert main(["--quiet", "estimate-attenuation", "--corpus", str(corpus_dir), "--op", "blur:1.0",
                 "--out", str(blurred)]) == 0
    refit = tmp_path / "refit.json"
    assert main(["--quiet", "fit-curve", "--curve", str(blurred), "--out", str(refit)]) == 0

    costs = tmp_path / "costs.json"
    costs.write_text(json.dumps([
        {'id': 0, 'name': 'blur', 'cost_flops': 1.0},
        {'id': 1, 'name': 'identity', 'cost_flops': 2.0, 'baseline_full': True},
    ]))
    out = tmp_path / "profiles.json"
    code = main(["--quiet", "make-profiles", "--curves", str(refit), str(identity), "--costs", str(costs),
                 "--bands", "0.0625,0.125,0.25", "--out", str(out)])
    assert code == 0
    profiles = json.loads(out.read_text())
    assert [p['id'] for p in profiles] == [0, 1]
    assert all(v >= 0.99 for v in profiles[1]['t_hat'])


def test_make_profiles_count_mismatch(tmp_path):
    curve = tmp_path / "curve.json"
    freqs = ((np.arange(32) + 0.5) / 64).tolist()
    curve.write_text(json.dumps({'k': 1, 'bin_freqs': freqs, 'samples': [1.0] * 32}))
    costs = tmp_path / "costs.json"
    costs.write_text(json.dumps([{'id': 0, 'name': 'a', 'cost_flops': 1.0}]))
    code = main(["--quiet", "make-profiles", "--curves", str(curve), str(curve), "--costs", str(costs),
                 "--bands", "0.1,0.2,0.3", "--out", str(tmp_path / "p.json")])
    assert code == 2


def test_make_profiles_duplicate_ids(tmp_path):
    curve = tmp_path / "curve.json"
    freqs = ((np.arange(32) + 0.5) / 64).tolist()
    curve.write_text(json.dumps({'k': 1, 'bin_freqs': freqs, 'samples': [1.0] * 32}))
    costs = tmp_path / "costs.json"
    costs.write_text(json.dumps([{'id': 0, 'name': 'a', 'cost_flops': 1.0},
                                 {'id': 0, 'name': 'b', 'cost_flops': 2.0}]))
    code = main(["--quiet", "make-profiles", "--curves", str(curve), str(curve), "--costs", str(costs),
                 "--bands", "0.1,0.2,0.3", "--out", str(tmp_path / "p.json")])
    assert code == 2


def test_schedule_flat_image(tmp_path):
    write_gray(str(tmp_path / "flat.png"), np.full((512, 512), 128))
    prefix = str(tmp_path / "out" / "flat")
    assert main(["--quiet", "schedule", "--image", str(tmp_path / "flat.png"),
                 "--config", write_config(tmp_path), "--out-prefix", prefix]) == 0

    report = ReportDocument.model_validate(json.loads(open(f"{prefix}.report.json").read()))
    assert report.n_patches == 1024
    assert report.ratio == pytest.approx(0.25)
    grid = DataManager.read_map_csv(f"{prefix}.map.csv").to_numpy()
    assert grid.shape == (32, 32)
    assert np.all(grid == 0)
    assert np.all(read_raster(f"{prefix}.heatmap.png") == 0)


def test_schedule_is_deterministic(tmp_path):
    write_gray(str(tmp_path / "img.png"), make_natural(4, shape=(96, 128)))
    config = write_config(tmp_path)
    outputs = []
    for run in range(2):
        prefix = str(tmp_path / f"run{run}")
        assert main(["--quiet", "schedule", "--image", str(tmp_path / "img.png"), "--config", config,
                     "--gaze", "64,48", "--out-prefix", prefix]) == 0
        outputs.append([open(f"{prefix}{ext}", 'rb').read()
                        for ext in (".map.csv", ".report.json", ".heatmap.png")])
    assert outputs[0] == outputs[1]


def test_schedule_with_previous_frame(tmp_path):
    frame = make_natural(5, shape=(64, 64))
    write_gray(str(tmp_path / "a.png"), frame)
    write_gray(str(tmp_path / "b.png"), np.roll(frame, 2, axis=1))
    prefix = str(tmp_path / "moving")
    code = main(["--quiet", "schedule", "--image", str(tmp_path / "b.png"), "--prev", str(tmp_path / "a.png"),
                 "--config", write_config(tmp_path), "--out-prefix", prefix])
    assert code == 0


@pytest.mark.parametrize("name", [f"natural_0{i}.pgm" for i in range(1, 6)])
def test_schedule_fixture_cheaper_away_from_gaze(tmp_path, name):
    fixtures = get_data_path("fixtures")
    prefix = str(tmp_path / "fov")
    assert main(["--quiet", "schedule", "--image", os.path.join(fixtures, name),
                 "--config", os.path.join(fixtures, "schedule_foveated.json"),
                 "--gaze", "160,90", "--out-prefix", prefix]) == 0

    heatmap = read_raster(f"{prefix}.heatmap.png").astype(np.float64)
    assert heatmap.shape == (180, 320)
    ppd = DataManager.load_viewing(os.path.join(fixtures, "viewing_320x180.json")).pixels_per_degree
    ecc = eccentricity_field((160, 90), (320, 180), ppd)
    assert heatmap[ecc > 10.0].mean() <= heatmap[ecc < 3.0].mean()




def test_schedule_gaze_outside(tmp_path):
    write_gray(str(tmp_path / "img.png"), np.full((64, 64), 100))
    code = main(["--quiet", "schedule", "--image", str(tmp_path / "img.png"), "--config", write_config(tmp_path),
                 "--gaze", "100,10", "--out-prefix", str(tmp_path / "x")])
    assert code == 2


def test_schedule_missing_variants(tmp_path):
    write_gray(str(tmp_path / "img.png"), np.full((64, 64), 100))
    path = tmp_path / "run.json"
    path.write_text(json.dumps({'viewing': get_data_path(AppConfig.DEFAULT_VIEWING_FILE), 'patch_size': 16}))
    code = main(["--quiet", "schedule", "--image", str(tmp_path / "img.png"), "--config", str(path),
                 "--out-prefix", str(tmp_path / "x")])
    assert code == 2


def test_schedule_missing_image(tmp_path):
    code = main(["--quiet", "schedule", "--image", str(tmp_path / "none.png"), "--config", write_config(tmp_path),
                 "--out-prefix", str(tmp_path / "x")])
    assert code == 2


def test_schedule_video(tmp_path):
    frame = make_natural(6, shape=(64, 64))
    clip = tmp_path / "clip"
    for i in range(3):
        write_gray(str(clip / f"f{i:02d}.png"), np.roll(frame, 4 * i, axis=1))
    prefix = str(tmp_path / "out" / "clip")
    code = main(["--quiet", "schedule-video", "--frames", str(clip / "*.png"), "--config", write_config(tmp_path),
                 "--block", "8", "--radius", "6", "--out-prefix", prefix])
    assert code == 0
    report = VideoReportDocument.model_validate(json.loads(open(f"{prefix}.report.json").read()))
    assert report.n_frames == 3
    assert report.fps == 24.0
    assert open(f"{prefix}.frame0002.map.csv").read()


def test_schedule_video_single_frame(tmp_path):
    clip = tmp_path / "clip"
    write_gray(str(clip / "f00.png"), np.full((32, 32), 10))
    code = main(["--quiet", "schedule-video", "--frames", str(clip / "*.png"), "--config", write_config(tmp_path),
                 "--out-prefix", str(tmp_path / "v")])
    assert code == 2


def test_usage_error_exit_code():
    assert main(["schedule"]) == 2


def test_plots_written(tmp_path, corpus_dir):
    curve_chart = tmp_path / "curve.html"
    assert main(["--quiet", "estimate-attenuation", "--corpus", str(corpus_dir), "--op", "bicubic:2",
                 "--out", str(tmp_path / "curve.json"), "--plot", str(curve_chart)]) == 0
    assert "plotly" in curve_chart.read_text()

    write_gray(str(tmp_path / "img.png"), make_natural(7, shape=(64, 64)))
    map_chart = tmp_path / "map.html"
    assert main(["--quiet", "schedule", "--image", str(tmp_path / "img.png"), "--config", write_config(tmp_path),
                 "--out-prefix", str(tmp_path / "m"), "--plot", str(map_chart)]) == 0
    assert "Quality Map" in map_chart.read_text()
