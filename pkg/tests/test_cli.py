import csv
import subprocess
import sys

import pytest

from scenemotion.cli import EXIT_CODES, main
from scenemotion.forecast import ground_truth_forecast, load_forecasts, save_forecasts
from scenemotion.interaction import interaction_report
from scenemotion.metrics import eval_scenes, evaluate
from scenemotion.scenario import load_scenarios

VIEW = ["--view.n_map", "24", "--view.n_agents", "6"]
TINY = ["--model.d_model", "16", "--model.n_red", "4", "--model.n_reduction_blocks", "1",
        "--model.n_context_blocks", "1", *VIEW]
GEN_SMALL = ["--generator.n_agents_min", "3", "--generator.n_agents_max", "4", "--generator.n_focal", "3"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "scenes.json"
    assert main(["gen", "--seed", "0", "--scenes", "3", "--out", str(path), *GEN_SMALL]) == 0
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data):
    out = tmp_path_factory.mktemp("run")
    rc = main(["train", "--data", str(data), "--out-dir", str(out), "--seed", "1", *TINY,
               "--train.epochs_joint", "3", "--train.checkpoint_every", "1"])
    assert rc == 0
    return out


def test_gen_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["gen", "--seed", "0", "--scenes", "4", "--out", str(a)]) == 0
    assert main(["gen", "--seed", "0", "--scenes", "4", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "wrote 4 scenes" in capsys.readouterr().out


def test_gen_hundred_scenes_round_trip(tmp_path):
    path = tmp_path / "many.json"
    assert main(["gen", "--seed", "5", "--scenes", "100", "--out", str(path)]) == 0
    assert len(load_scenarios(path)) == 100


def test_usage_and_input_errors(tmp_path, data, capsys):
    assert main(["gen", "--scenes", "0", "--out", str(tmp_path / "x.json")]) == EXIT_CODES["E_USAGE"]
    assert "error[E_USAGE]" in capsys.readouterr().err
    assert main(["train", "--data", str(data), "--out-dir", str(tmp_path / "m"), "--stage", "marginal"]) \
        == EXIT_CODES["E_USAGE"]
    assert main(["train", "--data", str(tmp_path / "missing.json"), "--out-dir", str(tmp_path)]) \
        == EXIT_CODES["E_INPUT"]
    assert "error[E_INPUT]" in capsys.readouterr().err
    assert main(["eval", "--data", str(data), "--out-dir", str(tmp_path)]) == EXIT_CODES["E_USAGE"]
    assert main(["bogus-command"]) == EXIT_CODES["E_USAGE"]
    assert main(["gen", "--scenes", "2", "--out", str(tmp_path / "y.json"), "--generator.n_focal", "9",
                 "--generator.n_agents_max", "4"]) == EXIT_CODES["E_CONFIG"]


def test_config_file(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  d_modle: 32\n")
    assert main(["gen", "--config", str(bad), "--scenes", "1", "--out", str(tmp_path / "o.json")]) \
        == EXIT_CODES["E_CONFIG"]
    assert "d_modle" in capsys.readouterr().err
    good = tmp_path / "good.yaml"
    good.write_text("seed: 4\ngenerator:\n  n_agents_min: 3\n  n_agents_max: 3\n  n_focal: 2\n")
    out = tmp_path / "g.json"
    assert main(["gen", "--config", str(good), "--scenes", "2", "--out", str(out)]) == 0
    assert all(len(s.agents) == 3 for s in load_scenarios(out))
    # a flag overrides the file
    out2 = tmp_path / "g2.json"
    assert main(["gen", "--config", str(good), "--scenes", "2", "--out", str(out2),
                 "--generator.n_agents_max", "5", "--generator.n_agents_min", "5"]) == 0
    assert all(len(s.agents) == 5 for s in load_scenarios(out2))


def test_train_outputs_and_resume(trained, data):
    rows = _rows(trained / "loss.csv")
    assert rows[0] == ["epoch", "stage", "loss", "lr"]
    assert [int(r[0]) for r in rows[1:]] == [0, 1, 2]
    assert (trained / "model.ckpt").exists() and (trained / "config.yaml").exists()
    # extend the same run to 5 epochs: numbering continues where it stopped
    assert main(["train", "--data", str(data), "--out-dir", str(trained), "--seed", "1", *TINY,
                 "--train.epochs_joint", "5", "--train.checkpoint_every", "1", "--resume"]) == 0
    rows2 = _rows(trained / "loss.csv")
    assert [int(r[0]) for r in rows2[1:]] == [0, 1, 2, 3, 4]
    assert rows2[1:4] == rows[1:]


def test_marginal_stage_from_joint(tmp_path, trained, data):
    out = tmp_path / "marg"
    rc = main(["train", "--data", str(data), "--out-dir", str(out), "--stage", "marginal", *TINY,
               "--init-checkpoint", str(trained / "model.ckpt"), "--train.epochs_marginal_finetune", "1"])
    assert rc == 0
    assert _rows(out / "loss.csv")[1][1] == "marginal_finetune"


def test_eval_ground_truth_stub(tmp_path, data):
    scenes = load_scenarios(data)
    fpath = tmp_path / "gt.json"
    save_forecasts(fpath, [ground_truth_forecast(s) for s in scenes])
    out = tmp_path / "ev"
    assert main(["eval", "--data", str(data), "--forecasts", str(fpath), "--out-dir", str(out)]) == 0
    rows = _rows(out / "metrics.csv")
    assert rows[0] == ["object_class", "horizon_s", "metric", "value"]
    for cls, _, metric, value in rows[1:]:
        if value == "nan":
            continue
        if metric in ("minSADE", "minSFDE", "minADE", "minFDE", "MR_joint", "MR_marginal"):
            assert float(value) == 0.0, (cls, metric)
        if metric.startswith(("mAP", "softmAP")):
            assert float(value) == 1.0, (cls, metric)


def test_eval_matches_library_and_mode_columns(tmp_path, trained, data):
    ck = str(trained / "model.ckpt")
    pred = tmp_path / "f.json"
    assert main(["predict", "--checkpoint", ck, "--data", str(data), "--out", str(pred), *VIEW]) == 0
    out = tmp_path / "ev"
    assert main(["eval", "--data", str(data), "--forecasts", str(pred), "--out-dir", str(out)]) == 0
    lib = evaluate(eval_scenes(load_forecasts(pred), load_scenarios(data)))
    assert (out / "metrics.csv").read_text() == lib.to_csv()
    for mode, want, absent in (("joint", "minSADE", "minADE"), ("marginal", "minADE", "minSADE")):
        d = tmp_path / mode
        assert main(["eval", "--checkpoint", ck, "--data", str(data), "--mode", mode, "--out-dir", str(d), *VIEW]) == 0
        metrics = {r[2] for r in _rows(d / "metrics.csv")[1:]}
        assert want in metrics and absent not in metrics


def test_analyze(tmp_path, trained, data):
    ck = str(trained / "model.ckpt")
    out = tmp_path / "an"
    assert main(["analyze", "--checkpoint", ck, "--data", str(data), "--out-dir", str(out), "--seed", "2", *VIEW]) == 0
    rows = _rows(out / "interaction.csv")
    assert [r[0] for r in rows[1:]] == ["merged", "top1", "top3", "top6", "random_baseline_avg", "within_mode_avg"]
    v = {r[0]: float(r[1]) for r in rows[1:]}
    assert v["top1"] <= v["top3"] <= v["top6"] <= v["merged"]
    pred = tmp_path / "f.json"
    assert main(["predict", "--checkpoint", ck, "--data", str(data), "--out", str(pred), *VIEW]) == 0
    lib = interaction_report(load_forecasts(pred), seed=2)
    assert (out / "interaction.csv").read_text() == lib.to_csv()
    assert (out / "clusters.csv").exists()


def test_bench(tmp_path, data):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--n-focal", "2,64", "--iters", "2", "--out", str(out), *TINY]) == 0
    rows = _rows(out)
    assert rows[0] == ["n_focal", "iters", "mean_s", "std_s"]
    assert [int(r[0]) for r in rows[1:]] == [2, 64]
    assert float(rows[2][2]) >= float(rows[1][2])
    assert main(["bench", "--n-focal", "2", "--iters", "1", "--out", str(out), *TINY]) == 0
    assert len(_rows(out)) == 2 and _rows(out)[1][1] == "1"
    assert main(["bench", "--data", str(data), "--n-focal", "3", "--iters", "1", "--out", str(out), *TINY]) == 0
    assert main(["bench", "--data", str(data), "--n-focal", "50", "--iters", "1", "--out", str(out), *TINY]) \
        == EXIT_CODES["E_INPUT"]
    assert main(["bench", "--n-focal", "0", "--out", str(out)]) == EXIT_CODES["E_USAGE"]


def test_plot_command(tmp_path, data):
    out = tmp_path / "scene.svg"
    sid = load_scenarios(data)[0].scenario_id
    assert main(["plot", "--data", str(data), "--scenario-id", sid, "--out", str(out)]) == 0
    assert out.read_text().lstrip().startswith("<")
    assert main(["plot", "--data", str(data), "--scenario-id", "nope", "--out", str(out)]) == EXIT_CODES["E_INPUT"]


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "scenemotion.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "CSV schema 1" in res.stdout


def test_shipped_config_matches_defaults():
    from pathlib import Path

    from scenemotion.cli import RunConfig, load_config

    path = Path(__file__).resolve().parents[1] / "configs" / "default.yaml"
    assert load_config(path) == RunConfig()
