"""Command-line interface: parsing, precedence, and end-to-end runs."""

import json
import os

import click
import numpy as np
import pytest
from click.testing import CliRunner

from advm.attacks import AttackConfig
from advm.cli import (
    load_dataset,
    load_models,
    main,
    parse_attack_name,
    parse_eps,
    read_config_file,
)
from advm.evaluate import AblationResult, TransferMatrix, parse_report_csv
from advm.models import load_model
from advm.sampling import SamplingSpec
from advm.tensor import load_tensor
from advm.transforms import TransformConfig


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One tiny trained model shared by the end-to-end tests."""
    root = tmp_path_factory.mktemp("cli")
    path = str(root / "surr.json")
    result = CliRunner().invoke(main, [
        "train", "--arch", "logistic", "--dataset", "synthetic:2x6x6:0.05",
        "--out", path, "--epochs", "2", "--seed", "3",
    ])
    assert result.exit_code == 0, result.output
    return {"root": root, "model": path}


def _cfg_from_manifest(c: dict) -> AttackConfig:
    t = dict(c["transforms"])
    t["enabled"] = tuple(t["enabled"])
    return AttackConfig(
        variant=c["variant"], eps=c["eps"], iters=c["iters"], mu=c["mu"],
        sampling=SamplingSpec(**c["sampling"]),
        transforms=TransformConfig(**t),
        normalize_sample_dir=c["normalize_sample_dir"], seed=c["seed"],
    )


# -- parsing helpers ---------------------------------------------------------------


def test_parse_eps_fraction_and_decimal():
    assert parse_eps("16/255") == 16.0 / 255.0
    assert parse_eps("0.125") == 0.125
    assert parse_eps("  8/255 ") == 8.0 / 255.0


def test_parse_attack_name_normalizes_hyphens_and_case():
    assert parse_attack_name("MI-FGSM") == "mifgsm"
    assert parse_attack_name("emi-fgsm") == "emifgsm"
    assert parse_attack_name("fgsm") == "fgsm"
    with pytest.raises(click.BadParameter):
        parse_attack_name("pgd")


def test_load_dataset_synthetic_spec():
    data = load_dataset("synthetic:2x3x8", seed=1)
    assert len(data) == 6
    assert data.image_shape == (8, 8, 1)
    assert data.class_count == 2
    noiseless = load_dataset("synthetic:2x3x8:0.0", seed=1)
    assert np.array_equal(noiseless.images[0], noiseless.images[1])
    with pytest.raises(click.BadParameter):
        load_dataset("synthetic:2x3", seed=0)
    with pytest.raises(click.BadParameter):
        load_dataset("idx:only_one_path", seed=0)
    with pytest.raises(click.BadParameter):
        load_dataset("csv:whatever", seed=0)


def test_load_models_validation(tmp_path):
    with pytest.raises(click.BadParameter):
        load_models("")
    with pytest.raises(click.BadParameter):
        load_models(str(tmp_path / "nothing-*.json"))


def test_read_config_file(tmp_path):
    p = tmp_path / "atk.cfg"
    p.write_text(
        "# crafting defaults\n"
        "attack = ni-fgsm\n"
        "iters = 3   # flags still win\n"
        "tim.kernel_size = 5\n"
        "\n"
    )
    assert read_config_file(str(p)) == {
        "attack": "ni-fgsm", "iters": "3", "tim.kernel_size": "5",
    }
    bad = tmp_path / "bad.cfg"
    bad.write_text("volume = 11\n")
    with pytest.raises(click.UsageError):
        read_config_file(str(bad))
    noeq = tmp_path / "noeq.cfg"
    noeq.write_text("just words\n")
    with pytest.raises(click.UsageError):
        read_config_file(str(noeq))


# -- end-to-end --------------------------------------------------------------------


def test_version_flag(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert "advm" in result.output and "0.1.0" in result.output


def test_train_writes_loadable_model(runner, trained):
    model = load_model(trained["model"])
    assert model.name == "surr"           # defaults to the output file stem
    assert model.spec.arch == "logistic"
    assert model.spec.seed == 3
    assert model.spec.input_shape == (6, 6, 1)


def test_train_seed_from_environment(runner, tmp_path):
    path = str(tmp_path / "env.json")
    result = runner.invoke(main, [
        "train", "--arch", "logistic", "--dataset", "synthetic:2x3x6",
        "--out", path, "--epochs", "1",
    ], env={"ADVM_SEED": "7"})
    assert result.exit_code == 0, result.output
    assert load_model(path).spec.seed == 7


def test_invalid_environment_seed_is_an_error(runner, tmp_path):
    result = runner.invoke(main, [
        "train", "--arch", "logistic", "--dataset", "synthetic:2x3x6",
        "--out", str(tmp_path / "x.json"), "--epochs", "1",
    ], env={"ADVM_SEED": "lots"})
    assert result.exit_code != 0
    assert "ADVM_SEED must be an integer" in result.output


def test_attack_writes_manifest_and_feasible_examples(runner, trained, tmp_path):
    out = str(tmp_path / "advset")
    result = runner.invoke(main, [
        "attack", "--surrogate", trained["model"],
        "--dataset", "synthetic:2x4x6:0.05",
        "--attack", "mi-fgsm", "--eps", "16/255", "--iters", "2",
        "--seed", "3", "--out", out,
    ])
    assert result.exit_code == 0, result.output
    assert "white-box success" in result.output

    with open(os.path.join(out, "manifest.json")) as fh:
        manifest = json.load(fh)
    assert manifest["format"] == "advm-advset"
    assert manifest["count"] == 8
    assert manifest["surrogates"] == ["surr"]
    assert len(manifest["files"]) == 8 and len(manifest["labels"]) == 8
    assert len(manifest["white_box"]) == 8

    # the stored config reproduces the run's hash exactly
    cfg = _cfg_from_manifest(manifest["config"])
    assert cfg.variant == "mifgsm"
    assert cfg.eps == 16.0 / 255.0
    assert cfg.config_hash() == manifest["config_hash"]
    assert manifest["config_hash"] in result.output

    # adversarial tensors are feasible against the regenerated originals
    data = load_dataset("synthetic:2x4x6:0.05", seed=3)
    for i, fname in enumerate(manifest["files"]):
        adv = load_tensor(os.path.join(out, fname))
        assert adv.shape == (6, 6, 1)
        assert adv.min() >= 0.0 and adv.max() <= 1.0
        assert np.max(np.abs(adv - data.images[i])) <= cfg.eps + 1e-12


def test_attack_reruns_are_byte_identical(runner, trained, tmp_path):
    args = [
        "attack", "--surrogate", trained["model"],
        "--dataset", "synthetic:2x3x6:0.05",
        "--attack", "eri-fgsm", "--eps", "8/255", "--iters", "2",
        "--samples", "2", "--seed", "11",
    ]
    out_a, out_b, out_c = (str(tmp_path / d) for d in ("a", "b", "c"))
    assert runner.invoke(main, args + ["--out", out_a]).exit_code == 0
    assert runner.invoke(main, args + ["--out", out_b]).exit_code == 0
    assert runner.invoke(main, args + ["--out", out_c, "--jobs", "2"]).exit_code == 0
    with open(os.path.join(out_a, "manifest.json")) as fh:
        files = json.load(fh)["files"]
    for fname in files + ["manifest.json"]:
        with open(os.path.join(out_a, fname), "rb") as fh:
            blob = fh.read()
        for other in (out_b, out_c):
            with open(os.path.join(other, fname), "rb") as fh:
                assert fh.read() == blob, f"{other}/{fname} diverged"


def test_attack_config_file_and_flag_precedence(runner, trained, tmp_path):
    cfg_path = tmp_path / "atk.cfg"
    cfg_path.write_text(
        "attack = ni-fgsm\n"
        "iters = 3\n"
        "tim.kernel_size = 5   # dotted keys map to transform fields\n"
    )
    out = str(tmp_path / "advset")
    result = runner.invoke(main, [
        "attack", "--surrogate", trained["model"],
        "--dataset", "synthetic:2x3x6:0.05",
        "--config", str(cfg_path), "--iters", "2", "--seed", "3", "--out", out,
    ])
    assert result.exit_code == 0, result.output
    with open(os.path.join(out, "manifest.json")) as fh:
        config = json.load(fh)["config"]
    assert config["variant"] == "nifgsm"                  # from the file
    assert config["iters"] == 2                           # flag beats file
    assert config["transforms"]["tim_kernel_size"] == 5   # dotted key mapped


def test_attack_rejects_unknown_config_key(runner, trained, tmp_path):
    cfg_path = tmp_path / "bad.cfg"
    cfg_path.write_text("warp = 9\n")
    result = runner.invoke(main, [
        "attack", "--surrogate", trained["model"],
        "--dataset", "synthetic:2x3x6", "--config", str(cfg_path),
        "--out", str(tmp_path / "x"),
    ])
    assert result.exit_code != 0
    assert "unknown key" in result.output


@pytest.fixture(scope="module")
def advset(trained):
    out = str(trained["root"] / "advset-eval")
    result = CliRunner().invoke(main, [
        "attack", "--surrogate", trained["model"],
        "--dataset", "synthetic:2x4x6:0.05",
        "--attack", "mi-fgsm", "--eps", "16/255", "--iters", "2",
        "--seed", "3", "--out", out,
    ])
    assert result.exit_code == 0, result.output
    return out


def test_eval_rates_match_manifest_white_box(runner, trained, advset):
    result = runner.invoke(main, ["eval", "--adv", advset,
                                  "--targets", trained["model"]])
    assert result.exit_code == 0, result.output
    matrix = parse_report_csv(result.output)
    assert isinstance(matrix, TransferMatrix)
    assert matrix.surrogates == ("surr",) and matrix.targets == ("surr",)
    with open(os.path.join(advset, "manifest.json")) as fh:
        manifest = json.load(fh)
    # scoring the surrogate itself reproduces the crafting-time flags
    assert matrix.rate("surr", "surr") == (
        sum(manifest["white_box"]) / manifest["count"]
    )


def test_eval_accepts_glob_targets_and_writes_file(runner, trained, advset, tmp_path):
    out_path = str(tmp_path / "matrix.csv")
    pattern = str(trained["root"] / "*.json")
    result = runner.invoke(main, ["eval", "--adv", advset, "--targets", pattern,
                                  "--out", out_path])
    assert result.exit_code == 0, result.output
    with open(out_path) as fh:
        assert isinstance(parse_report_csv(fh.read()), TransferMatrix)


def test_eval_missing_manifest_is_an_error(runner, trained, tmp_path):
    result = runner.invoke(main, ["eval", "--adv", str(tmp_path),
                                  "--targets", trained["model"]])
    assert result.exit_code != 0
    assert "no adversarial examples" in result.output


def test_eval_empty_manifest_is_an_error(runner, trained, tmp_path):
    with open(tmp_path / "manifest.json", "w") as fh:
        json.dump({"count": 0, "files": [], "labels": [], "surrogates": ["s"],
                   "config_hash": "0" * 12, "config": {}}, fh)
    result = runner.invoke(main, ["eval", "--adv", str(tmp_path),
                                  "--targets", trained["model"]])
    assert result.exit_code != 0
    assert "no adversarial examples" in result.output


def test_ablate_sweeps_sample_count(runner, trained, tmp_path):
    out_path = str(tmp_path / "sweep.csv")
    result = runner.invoke(main, [
        "ablate", "--param", "samples", "--grid", "1,3",
        "--attack", "emi-fgsm", "--eps", "16/255", "--iters", "2",
        "--surrogate", trained["model"], "--targets", trained["model"],
        "--dataset", "synthetic:2x3x6:0.05", "--seed", "3", "--out", out_path,
    ])
    assert result.exit_code == 0, result.output
    with open(out_path) as fh:
        sweep = parse_report_csv(fh.read())
    assert isinstance(sweep, AblationResult)
    assert sweep.parameter == "samples"
    assert sweep.grid == ("1", "3")
    assert sweep.targets == ("surr",)


def test_report_rerenders_csv_as_markdown(runner, trained, advset, tmp_path):
    csv_path = str(tmp_path / "matrix.csv")
    assert runner.invoke(main, ["eval", "--adv", advset,
                                "--targets", trained["model"],
                                "--out", csv_path]).exit_code == 0
    result = runner.invoke(main, ["report", "--in", csv_path,
                                  "--format", "markdown"])
    assert result.exit_code == 0, result.output
    assert result.output.startswith("| surrogate \\ target |")
    assert "(* = white-box)" in result.output
