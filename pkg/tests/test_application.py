import json

import numpy as np
import pytest

from multifractal_segmentation.application import main
from multifractal_segmentation.holder import AlphaMap
from multifractal_segmentation.raster_io import (
    load_mask,
    load_raster,
    load_spectrum_csv,
    load_tau_csv,
    save_raster,
)

WATER = ["--water", "20,20,60,60", "--water", "90,90,30,30"]


@pytest.fixture
def scene(tmp_path):
    """A 128x128 synthetic scene with its truth mask and reflectances."""
    paths = {
        "scene": tmp_path / "scene.json",
        "truth": tmp_path / "truth.pgm",
        "reflectance": tmp_path / "reflectance.json",
    }
    argv = [
        "synth",
        "scene",
        "--depth",
        "7",
        "--shuffle-seed",
        "1",
        *WATER,
        "-o",
        str(paths["scene"]),
        "--truth-output",
        str(paths["truth"]),
        "--reflectance-output",
        str(paths["reflectance"]),
    ]
    assert main(argv) == 0
    return paths


def test_synth_cascade(tmp_path):
    output = tmp_path / "cascade.json"
    assert main(["synth", "cascade", "--depth", "5", "-o", str(output)]) == 0
    values = load_raster(output).band("cascade").values
    assert values.shape == (32, 32)
    assert values.sum() == pytest.approx(1.0)


def test_scene_outputs(scene):
    truth = load_mask(scene["truth"])
    assert truth.shape == (128, 128)
    assert truth.water_count() == 60 * 60 + 30 * 30
    assert len(load_raster(scene["reflectance"])) == 5


def test_threshold_pipeline(scene, tmp_path):
    alpha = tmp_path / "alpha.json"
    spectrum = tmp_path / "spectrum.csv"
    fmap = tmp_path / "f.json"
    mask = tmp_path / "mask.pgm"
    report = tmp_path / "report.json"
    assert main(["alpha-map", str(scene["scene"]), "-o", str(alpha)]) == 0
    assert main(["spectrum", "coarse", str(alpha), "-o", str(spectrum)]) == 0
    assert main(["fmap", str(alpha), str(spectrum), "-o", str(fmap)]) == 0
    argv = [
        "segment",
        "mf",
        str(alpha),
        str(fmap),
        "--alpha-lo",
        "1.999999",
        "--alpha-hi",
        "2.000001",
        "--f-lo",
        "0",
        "--f-hi",
        "2.5",
        "-o",
        str(mask),
    ]
    assert main(argv) == 0

    # a 64 pixel core centred in the 128 pixel scene
    water = load_mask(mask).water
    assert water.shape == (64, 64)
    assert water[5:35, 5:35].all()
    truth = load_mask(scene["truth"]).water[32:96, 32:96]
    assert not (water & ~truth).any()

    assert main(["compare", str(mask), str(mask), "-o", str(report)]) == 0
    assert json.loads(report.read_text())["accuracy"] == 100.0
    assert len(load_spectrum_csv(spectrum)) >= 1


def test_ndwi_and_majority(scene, tmp_path):
    mask = tmp_path / "ndwi.pgm"
    index = tmp_path / "ndwi.json"
    filtered = tmp_path / "filtered.pgm"
    argv = [
        "segment",
        "ndwi",
        str(scene["reflectance"]),
        "--ndwi-output",
        str(index),
        "-o",
        str(mask),
    ]
    assert main(argv) == 0
    truth = load_mask(scene["truth"]).water
    assert np.array_equal(load_mask(mask).water, truth)
    assert load_raster(index).band("ndwi").values.shape == (128, 128)
    assert main(["filter-majority", str(mask), "-o", str(filtered)]) == 0
    smoothed = load_mask(filtered).water
    assert np.mean(smoothed == truth) > 0.99


def test_legendre_and_analytic_spectra(tmp_path):
    band = tmp_path / "cascade.json"
    spectrum = tmp_path / "legendre.csv"
    tau_path = tmp_path / "tau.csv"
    analytic = tmp_path / "analytic.csv"
    assert main(["synth", "cascade", "--depth", "6", "-o", str(band)]) == 0
    argv = [
        "spectrum",
        "legendre",
        str(band),
        "--q-min=-2",
        "--q-max=2",
        "--tau-output",
        str(tau_path),
        "-o",
        str(spectrum),
    ]
    assert main(argv) == 0
    tau = load_tau_csv(tau_path)
    assert len(tau) == 17
    assert tau.at(1.0) == pytest.approx(0.0, abs=1e-6)
    assert tau.at(0.0) == pytest.approx(2.0, abs=1e-6)
    argv = ["synth", "analytic", "--q-min=-2", "--q-max=2", "-o", analytic]
    assert main([str(arg) for arg in argv]) == 0
    estimated = load_spectrum_csv(spectrum)
    exact = load_spectrum_csv(analytic)
    assert max(exact.fs) == pytest.approx(2.0, abs=1e-6)
    assert max(estimated.fs) == pytest.approx(2.0, abs=1e-6)


def test_threads_do_not_change_outputs(scene, tmp_path):
    outputs = []
    for threads in ("1", "4"):
        alpha = tmp_path / f"alpha{threads}.json"
        spectrum = tmp_path / f"spectrum{threads}.csv"
        argv = ["--threads", threads, "alpha-map", str(scene["scene"])]
        assert main([*argv, "-o", str(alpha)]) == 0
        argv = ["--threads", threads, "spectrum", "coarse", str(alpha)]
        assert main([*argv, "-o", str(spectrum)]) == 0
        outputs.append(
            (
                alpha.with_suffix(".raw").read_bytes(),
                spectrum.read_bytes(),
            )
        )
    assert outputs[0] == outputs[1]


def test_repeated_runs_are_identical(tmp_path):
    payloads = []
    for name in ("first", "second"):
        output = tmp_path / f"{name}.json"
        argv = ["synth", "cascade", "--depth", "6", "--shuffle-seed", "9"]
        assert main([*argv, "-o", str(output)]) == 0
        payloads.append(output.with_suffix(".raw").read_bytes())
    assert payloads[0] == payloads[1]


def test_mlp_train_and_predict(scene, tmp_path):
    model = tmp_path / "model.json"
    mask = tmp_path / "predicted.pgm"
    argv = [
        "mlp",
        "train",
        str(scene["reflectance"]),
        str(scene["truth"]),
        "--hidden",
        "8",
        "-o",
        str(model),
    ]
    assert main(argv) == 0
    assert json.loads(model.read_text())["layer_sizes"] == [5, 8, 2]
    argv = ["mlp", "predict", str(scene["reflectance"]), str(model)]
    assert main([*argv, "-o", str(mask)]) == 0
    truth = load_mask(scene["truth"]).water
    assert np.mean(load_mask(mask).water == truth) >= 0.95


def test_suggest_writes_candidates(tmp_path):
    spectrum = tmp_path / "spectrum.csv"
    spectrum.write_text(
        "alpha,f,count\n1.9,1.8,5\n2.0,1.2,5\n2.1,0.95,5\n"
        "2.2,1.3,5\n2.3,1.4,5\n2.4,1.0,5\n"
    )
    output = tmp_path / "candidates.json"
    argv = ["segment", "suggest", str(spectrum), "-o", str(output)]
    assert main(argv) == 0
    assert json.loads(output.read_text()) == [
        {"alpha_lo": 2.1, "alpha_hi": 2.4, "f_lo": 0.0, "f_hi": 1.4}
    ]


def test_config_file_supplies_defaults(tmp_path):
    config = tmp_path / "job.json"
    config.write_text('{"depth": 3, "shuffle-seed": 2}')
    output = tmp_path / "cascade.json"
    argv = ["--config", str(config), "synth", "cascade", "-o", str(output)]
    assert main(argv) == 0
    assert load_raster(output).width == 8
    assert main([*argv, "--depth", "4"]) == 0
    assert load_raster(output).width == 16


def test_config_with_unknown_option(tmp_path):
    config = tmp_path / "job.json"
    config.write_text('{"depht": 3}')
    argv = ["--config", str(config), "synth", "cascade", "-o", "x.json"]
    assert main(argv) == 2


def test_missing_input_is_an_io_error(tmp_path):
    argv = ["alpha-map", str(tmp_path / "absent.pgm")]
    assert main([*argv, "-o", str(tmp_path / "alpha.json")]) == 3


def test_inverted_thresholds_are_a_numeric_error(tmp_path):
    argv = ["segment", "mf", "alpha.json", "f.json", "-o", "mask.pgm"]
    bounds = ["--alpha-lo", "2.5", "--alpha-hi", "2.1", "--f-lo", "0"]
    assert main([*argv, *bounds, "--f-hi", "1"]) == 4


def test_bad_usage_exits_with_two(tmp_path):
    with pytest.raises(SystemExit) as error:
        main(["synth", "cascade"])
    assert error.value.code == 2
    with pytest.raises(SystemExit) as error:
        main(["segment", "watershed"])
    assert error.value.code == 2
    thresholds = tmp_path / "t.json"
    thresholds.write_text("{}")
    argv = ["segment", "mf", "a.json", "f.json", "-o", "m.pgm"]
    with pytest.raises(SystemExit) as error:
        main([*argv, "--thresholds", str(thresholds), "--f-lo", "0"])
    assert error.value.code == 2


def _flat_alpha_map(path, side: int = 16) -> None:
    am = AlphaMap(
        alpha=np.full((side, side), 2.0),
        r2=np.ones((side, side)),
        valid=np.ones((side, side), dtype=bool),
    )
    save_raster(am.to_stack(), path, dtype="f64")


@pytest.mark.parametrize("row", ["2.0,1.5", "abc,1.5,3"])
def test_malformed_spectrum_rows_are_io_errors(tmp_path, row):
    alpha = tmp_path / "alpha.json"
    _flat_alpha_map(alpha)
    spectrum = tmp_path / "spectrum.csv"
    spectrum.write_text(f"alpha,f,count\n{row}\n")
    argv = ["fmap", str(alpha), str(spectrum), "-o", str(tmp_path / "f.json")]
    assert main(argv) == 3
    argv = ["segment", "suggest", str(spectrum)]
    assert main([*argv, "-o", str(tmp_path / "c.json")]) == 3


def test_config_values_go_through_option_types(tmp_path):
    alpha = tmp_path / "alpha.json"
    _flat_alpha_map(alpha)
    config = tmp_path / "job.json"
    config.write_text('{"mesh-widths": [1, 2, 4], "classes": "5"}')
    spectrum = tmp_path / "spectrum.csv"
    argv = ["--config", str(config), "spectrum", "coarse", str(alpha)]
    assert main([*argv, "-o", str(spectrum)]) == 0
    curve = load_spectrum_csv(spectrum)
    assert curve.alphas.tolist() == [2.0]
    assert curve.fs.tolist() == pytest.approx([2.0])


@pytest.mark.parametrize(
    "values",
    [
        '{"mesh_widths": 4}',
        '{"mesh_widths": {"low": 4}}',
        '{"classes": "many"}',
        '{"classes": 0}',
        '{"classes": true}',
        '{"classes": null}',
        '{"classes": [3]}',
    ],
)
def test_config_values_of_the_wrong_kind(tmp_path, values):
    alpha = tmp_path / "alpha.json"
    _flat_alpha_map(alpha)
    config = tmp_path / "job.json"
    config.write_text(values)
    argv = ["--config", str(config), "spectrum", "coarse", str(alpha)]
    assert main([*argv, "-o", str(tmp_path / "spectrum.csv")]) == 2


def test_config_choices_are_checked(tmp_path):
    config = tmp_path / "job.json"
    config.write_text('{"sensor": "radar"}')
    argv = ["--config", str(config), "alpha-map", "scene.json", "-o", "a.json"]
    assert main(argv) == 2


def test_config_water_rectangles(tmp_path):
    config = tmp_path / "job.json"
    config.write_text('{"depth": 6, "water": [[4, 4, 10, 10], "20,20,5,5"]}')
    truth = tmp_path / "truth.pgm"
    argv = ["--config", str(config), "synth", "scene", "--truth-output"]
    argv += [str(truth), "-o", str(tmp_path / "scene.json")]
    assert main(argv) == 0
    assert load_mask(truth).water_count() == 100 + 25
    config.write_text('{"water": [[4, 4, 10]]}')
    assert main(argv) == 2


@pytest.mark.parametrize("rectangle", ["1,2,3", "0,0,0,5", "a,b,c,d"])
def test_malformed_water_rectangle_is_bad_usage(tmp_path, rectangle):
    argv = ["synth", "scene", "--depth", "5", "--water", rectangle]
    argv += ["--truth-output", str(tmp_path / "t.pgm")]
    with pytest.raises(SystemExit) as error:
        main([*argv, "-o", str(tmp_path / "s.json")])
    assert error.value.code == 2
