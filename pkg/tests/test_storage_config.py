from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from flowfront.errors import ConfigError
from flowfront.schemas.config import RunConfig, derive_seed, load_config, parse_config
from flowfront.services import storage
from flowfront.services.pde_sim import FrontSeries


def test_defaults():
    cfg = RunConfig()
    assert (cfg.grid.nx, cfg.grid.ny, cfg.grid.Lx, cfg.grid.Ly) == (64, 128, 0.8, 0.9)
    assert cfg.material.c0 == 6.75e-9 and cfg.material.A == 0.5
    assert cfg.p_th_resolved == pytest.approx(1e3)
    assert cfg.model.order == 4 and cfg.filter.Ps == 10.0
    assert cfg.sweep.sample_intervals == [1.0, 5.0, 20.0]
    assert cfg.scenario.kind == "none"
    assert load_config(None) == cfg


def test_unknown_key_reported_with_pointer():
    with pytest.raises(ConfigError) as exc:
        parse_config({"grid": {"nx": 8, "nz": 3}})
    assert any(p.startswith("/grid/nz:") for p in exc.value.problems)


def test_nested_pointer_for_list_and_bounds():
    with pytest.raises(ConfigError) as exc:
        parse_config({"grid": {"nx": 1}, "sweep": {"sensor_counts": []}})
    problems = exc.value.problems
    assert any(p.startswith("/grid/nx:") for p in problems)
    assert any(p.startswith("/sweep/sensor_counts:") for p in problems)


def test_sample_interval_must_cover_pde_step():
    with pytest.raises(ConfigError, match="sample_interval"):
        parse_config({"sim": {"dt_pde": 2.0, "sample_interval": 1.0}})


def test_model_section_accepts_capitalised_y_min():
    assert parse_config({"model": {"Y_min": 0.01}}).model.y_min == 0.01
    assert parse_config({"model": {"y_min": 0.02}}).model.y_min == 0.02


def test_explicit_threshold_wins():
    assert parse_config({"material": {"p_th": 500.0}}).p_th_resolved == 500.0


def test_load_config_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError, match="malformed JSON"):
        load_config(path)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")


def test_builders(small_config):
    grid = small_config.build_grid()
    assert grid.shape == (17, 9)
    assert small_config.build_field().kappa_over_mu.shape == grid.shape
    stencil = small_config.build_stencil(5)
    assert stencil.order == 4 and stencil.dx == pytest.approx(0.2)
    assert small_config.build_stencil(5, 2).order == 2
    assert small_config.estimate_options().seed == 11
    assert small_config.with_seed(3).seed == 3
    assert small_config.with_seed(None) is small_config


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
    assert len({derive_seed(5, 0, k) for k in range(50)}) == 50
    assert derive_seed(5, 1) != derive_seed(6, 1)


def test_write_text_leaves_no_temp_files(tmp_path):
    target = tmp_path / "sub" / "out.txt"
    storage.write_text(target, "hello\n")
    assert target.read_text(encoding="utf-8") == "hello\n"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]


def test_write_json_sorted(tmp_path):
    path = tmp_path / "x.json"
    storage.write_json(path, {"b": 1, "a": {"d": 2, "c": 3}})
    text = path.read_text(encoding="utf-8")
    assert text.index('"a"') < text.index('"b"')
    assert text.index('"c"') < text.index('"d"')
    assert storage.read_json(path) == {"a": {"c": 3, "d": 2}, "b": 1}


def series():
    fronts = np.array([[0.1, np.nan, 0.123456789123], [0.2, 0.25, 0.3]])
    return FrontSeries(times=np.array([0.0, 5.0]), fronts=fronts, Ly=0.9, nx=8, columns=np.array([0, 4, 8]))


def test_front_csv_format(tmp_path):
    path = tmp_path / "f.csv"
    storage.write_front_csv(series(), path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,line_0,line_1,line_2"
    assert lines[1] == "0,0.1,NaN,0.123456789"


def test_front_csv_read_back(tmp_path):
    path = tmp_path / "f.csv"
    storage.write_front_csv(series(), path)
    back = storage.read_front_csv(path, Ly=0.9, nx=8)
    assert back.columns.tolist() == [0, 4, 8]
    assert_allclose(back.fronts, series().fronts, rtol=1e-8, equal_nan=True)
    assert_allclose(back.times, [0.0, 5.0])


def test_front_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("time,a,b\n0,1,2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="header"):
        storage.read_front_csv(path, Ly=0.9, nx=8)
    with pytest.raises(FileNotFoundError):
        storage.read_front_csv(tmp_path / "none.csv", Ly=0.9, nx=8)


def test_manifest_hashes_files(tmp_path):
    a = tmp_path / "a.csv"
    storage.write_text(a, "t,rmse\n")
    path = storage.write_manifest(tmp_path, {"seed": 1}, [a])
    manifest = json.loads(path.read_text(encoding="utf-8"))
    assert manifest["config"] == {"seed": 1}
    assert manifest["files"] == {"a.csv": storage.sha256_file(a)}


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "configs").glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    if cfg.scenario.kind != "none":
        assert cfg.sensors.n_sensors == 8
        assert max(cfg.scenario.sensors) < cfg.sensors.n_sensors
    for scenario in cfg.sweep.scenarios:
        assert all(s < min(cfg.sweep.sensor_counts) for s in scenario.sensors)


def test_manifest_holds_only_config_and_files(tmp_path):
    a = tmp_path / "rmse_0.csv"
    storage.write_text(a, "t,rmse\n1,0.1\n")
    manifest = storage.read_json(storage.write_manifest(tmp_path, {"seed": 2}, [a]))
    assert set(manifest) == {"config", "files"}


def test_case_study_sweep_runs_on_eight_sensors():
    cfg = load_config(Path(__file__).parent.parent / "configs" / "case_study_sweep.json")
    assert cfg.sweep.sensor_counts == [8]
    labels = [s.label for s in cfg.sweep.scenarios]
    assert labels == ["none", "drop_sensor[3]", "partial_dropout[3+5+7]@0.7", "bias[3]@0.5+0.2"]
