import io
import json

import numpy as np
import pytest

from magmap import Dataset, Domain, Hyperparameters, build_index_set, fit
from magmap.fileio import (
    GridSpec,
    InputError,
    ModelFileError,
    config_domain,
    config_theta,
    format_table,
    grid_table,
    iter_samples,
    load_config,
    load_model,
    predict_model,
    read_grid_csv,
    read_samples,
    save_model,
    write_samples,
    write_table,
)
from magmap.sequential import init, run_spatiotemporal

from .helpers import random_dataset


class TestSamples:
    def test_round_trip_exact(self, tmp_path):
        data = random_dataset(25, seed=1, t=True)
        write_samples(tmp_path / "s.csv", data)
        back = read_samples(tmp_path / "s.csv")
        np.testing.assert_array_equal(back.x, data.x)
        np.testing.assert_array_equal(back.y, data.y)
        np.testing.assert_array_equal(back.t, data.t)

    def test_without_time_column(self, tmp_path):
        write_samples(tmp_path / "s.csv", random_dataset(3))
        assert read_samples(tmp_path / "s.csv").t is None

    def test_comments_blank_lines_and_column_order(self):
        text = "# survey 1\nbz,by,bx,z,y,x\n\n1,2,3,0.1,0.2,0.3\n# gap\n4,5,6,0,0,0\n"
        rows = list(iter_samples(io.StringIO(text)))
        assert [line for line, _ in rows] == [4, 6]
        assert rows[0][1].x == (0.3, 0.2, 0.1) and rows[0][1].y == (3.0, 2.0, 1.0)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        with pytest.raises(InputError, match="no samples"):
            read_samples(p)
        p.write_text("x,y,z,bx,by,bz\n")
        with pytest.raises(InputError, match="no samples"):
            read_samples(p)

    def test_bad_row_names_line(self):
        text = "x,y,z,bx,by,bz\n0,0,0,1,1,1\n0,0,zero,1,1,1\n"
        with pytest.raises(InputError, match="line 3"):
            list(iter_samples(io.StringIO(text), "f.csv"))

    def test_missing_column(self):
        with pytest.raises(InputError, match="bz"):
            list(iter_samples(io.StringIO("x,y,z,bx,by\n")))

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            read_samples(tmp_path / "nope.csv")


class TestConfig:
    def test_toml_and_json(self, tmp_path):
        (tmp_path / "c.toml").write_text(
            "m = 64\n[domain]\nhalf_lengths = [1.0, 1.0, 0.2]\ncenter = [0.0, 0.0, 0.1]\n"
            "[theta]\nsigma2_lin = 575\nfield_magnitude = 373\nell_se = 1.87\nsigma2_noise = 5.53\n"
        )
        cfg = load_config(tmp_path / "c.toml")
        assert cfg["m"] == 64
        assert config_domain(cfg) == Domain((1.0, 1.0, 0.2), (0.0, 0.0, 0.1))
        assert config_theta(cfg).field_magnitude == pytest.approx(373)
        (tmp_path / "c.json").write_text(json.dumps({"hyperparameters": Hyperparameters(1, 2, 3, 4).to_dict()}))
        assert config_theta(load_config(tmp_path / "c.json")) == Hyperparameters(1, 2, 3, 4)
        assert load_config(None) == {} and config_domain({}) is None

    def test_bad_config(self, tmp_path):
        (tmp_path / "c.toml").write_text("m = [\n")
        with pytest.raises(InputError):
            load_config(tmp_path / "c.toml")
        with pytest.raises(InputError):
            config_theta({"theta": {"sigma2_lin": 1}})


class TestModelFiles:
    def test_batch_round_trip(self, tmp_path, unit_domain, sim_theta):
        model = fit(random_dataset(40, seed=2), unit_domain, 32, sim_theta)
        save_model(tmp_path / "m.npz", model)
        back = load_model(tmp_path / "m.npz")
        assert back.theta == model.theta and back.domain == model.domain and back.n == 40
        X = np.random.default_rng(3).uniform(-0.4, 0.4, (5, 3))
        a, b = predict_model(model, X, potential=True), predict_model(back, X, potential=True)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.covariance, b.covariance)
        np.testing.assert_array_equal(a.potential_mean, b.potential_mean)

    def test_sequential_round_trip(self, tmp_path, unit_domain, sim_theta):
        th = sim_theta.replace(ell_time=100.0)
        state = run_spatiotemporal(init(build_index_set(32, unit_domain), th), random_dataset(30, seed=4, t=True))
        save_model(tmp_path / "s.npz", state)
        back = load_model(tmp_path / "s.npz")
        assert back.t_last == state.t_last and back.samples_seen == 30 and back.theta.ell_time == 100.0
        np.testing.assert_allclose(back.Sigma, state.Sigma, rtol=1e-10, atol=1e-12 * np.abs(state.Sigma).max())

    def test_garbage_file(self, tmp_path):
        p = tmp_path / "bad.npz"
        p.write_bytes(b"not a zip")
        with pytest.raises(ModelFileError):
            load_model(p)
        with pytest.raises(ModelFileError):
            load_model(tmp_path / "missing.npz")

    def test_wrong_version(self, tmp_path, unit_domain, sim_theta):
        save_model(tmp_path / "m.npz", fit(random_dataset(5), unit_domain, 8, sim_theta))
        with np.load(tmp_path / "m.npz") as z:
            f = {k: z[k] for k in z.files}
        f["version"] = np.array(99)
        np.savez(tmp_path / "v.npz", **f)
        with pytest.raises(ModelFileError, match="version"):
            load_model(tmp_path / "v.npz")
        f["version"] = np.array(1)
        f["format"] = np.array("other")
        np.savez(tmp_path / "f.npz", **f)
        with pytest.raises(ModelFileError):
            load_model(tmp_path / "f.npz")


class TestGrid:
    def test_parse_box_and_slice(self):
        g = GridSpec.parse("-1:1:3,0:2:5,0:0.5:2")
        assert g.shape == (3, 5, 2) and g.points().shape == (30, 3)
        s = GridSpec.parse("-1:1:3,0:2:5", z_slice=0.25)
        assert s.shape == (3, 5)
        np.testing.assert_array_equal(s.points()[:, 2], 0.25)

    @pytest.mark.parametrize("text", ["1:0:3,0:1:3,0:1:3", "0:1:1,0:1:3,0:1:3", "0:1,0:1:3,0:1:3", "0:1:3"])
    def test_parse_errors(self, text):
        with pytest.raises(InputError):
            GridSpec.parse(text)

    def test_from_dict_slice(self):
        g = GridSpec.from_dict({"bounds": [[-1, 1], [-1, 1]], "resolution": [4, 4], "z_slice": 0.0})
        assert g.points().shape == (16, 3)

    def test_must_intersect_domain(self, unit_domain):
        GridSpec.parse("-2:2:3,-2:2:3,-2:2:3").check_against(unit_domain)
        with pytest.raises(InputError):
            GridSpec.parse("1:2:3,0:1:3,0:1:3").check_against(unit_domain)

    def test_table_columns(self, unit_domain, sim_theta):
        model = fit(random_dataset(20, seed=5), unit_domain, 16, sim_theta)
        X = GridSpec.parse("-0.4:0.4:3,-0.4:0.4:3", z_slice=0.0).points()
        cols, vals = grid_table(X, predict_model(model, X, potential=True), ["magnitude", "potential", "field", "variance"])
        assert cols == ["x", "y", "z", "mean_x", "mean_y", "mean_z", "var_x", "var_y", "var_z",
                        "potential", "pot_var", "magnitude"]
        np.testing.assert_allclose(vals[:, -1], np.linalg.norm(vals[:, 3:6], axis=1))
        assert np.all(vals[:, 6:9] >= 0)

    def test_write_csv_and_json(self, tmp_path):
        cols, vals = ["x", "y", "z"], np.arange(6.0).reshape(2, 3) / 7
        write_table(tmp_path / "g.csv", cols, vals)
        back_cols, back = read_grid_csv(tmp_path / "g.csv")
        assert back_cols == cols
        np.testing.assert_array_equal(back, vals)
        write_table(tmp_path / "g.json", cols, vals)
        d = json.loads((tmp_path / "g.json").read_text())
        assert d["columns"] == cols and np.allclose(d["rows"], vals)
        assert format_table(cols, vals).splitlines()[0] == "x,y,z"


def test_dataset_from_file_fits(tmp_path, unit_domain, sim_theta):
    data = random_dataset(30, seed=6)
    write_samples(tmp_path / "d.csv", data)
    a = fit(read_samples(tmp_path / "d.csv"), unit_domain, 16, sim_theta)
    b = fit(Dataset(data.x, data.y), unit_domain, 16, sim_theta)
    np.testing.assert_array_equal(a.mean, b.mean)
