import json
import shutil

import pytest
import yaml

from realrech import cli, pipeline
from realrech.config import ConfigError, ExperimentConfig

SMALL = dict(seed=11, n_particles=120, n_mh_moves=2, checkpoint_every=15, mcs_boot=300)


def _cfg_file(tmp, datasets, **kw):
    d = {"datasets": [str(p) for p in datasets], "output": str(tmp / "out"), **SMALL, **kw}
    path = tmp / "cfg.yaml"
    path.write_text(yaml.safe_dump(d))
    return path


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    data = tmp / "sim.csv"
    assert cli.run(["simulate", "--model", "realgarch", "--n", "260", "--seed", "3", "--out", str(data)]) == 0
    cfg = _cfg_file(tmp, [data])
    for cmd in ("fit", "forecast", "evaluate", "trade", "mcs", "report"):
        assert cli.run([cmd, "-c", str(cfg)]) == 0, cmd
    return tmp, data, cfg


def test_outputs_present_and_footed(pipeline_run):
    tmp, _, cfg = pipeline_run
    base = tmp / "out" / "sim"
    footer = ExperimentConfig.load(cfg).footer()
    for rel in ("fit/table.txt", "evaluate/table.txt", "trade/table.txt", "mcs/table.txt"):
        text = (base / rel).read_text()
        assert text.rstrip().endswith(footer), rel
    assert (tmp / "out" / "report.txt").read_text().rstrip().endswith(footer)
    fc = (base / "forecast" / "garch.csv").read_text().splitlines()
    assert fc[0] == "date,sigma2_hat,var_1,var_5,es_1,es_5,log_pred_density"
    assert len(fc) == 1 + 130
    summ = json.loads((base / "fit" / "summary.json").read_text())
    assert [m["model"] for m in summ["models"]] == ["garch", "realgarch", "rech", "realrech"]
    assert set(summ["models"][3]["params"]) == {"beta", "beta0", "beta1", "gamma"}
    assert (base / "evaluate" / "losses" / "opttrading.csv").exists()


def test_rerun_is_bit_identical(pipeline_run):
    tmp, _, cfg = pipeline_run
    base = tmp / "out" / "sim"
    before = {p: p.read_bytes() for p in base.rglob("*") if p.is_file() and p.suffix in (".csv", ".txt", ".json")}
    shutil.rmtree(base / "forecast")
    for cmd in ("fit", "forecast", "evaluate", "trade", "mcs"):
        assert cli.run([cmd, "-c", str(cfg)]) == 0
    for p, b in before.items():
        assert p.read_bytes() == b, p


def test_forecast_resume_byte_identical(pipeline_run, tmp_path):
    tmp, data, cfg_path = pipeline_run
    cfg = ExperimentConfig.load(cfg_path)
    series = pipeline.load_series(cfg, str(data))
    out = tmp_path / "fc"
    out.mkdir()
    fit_dir = tmp / "out" / "sim" / "fit"
    pipeline.forecast_model(cfg, series, "realrech", out, fit_dir, stop_after=47)
    # simulate a crash after the last checkpoint: drop the rows written since then
    pipeline._truncate_forecasts(out / "realrech.csv", 47)
    pipeline.forecast_model(cfg, series, "realrech", out, fit_dir)
    assert (out / "realrech.csv").read_bytes() == (tmp / "out" / "sim" / "forecast" / "realrech.csv").read_bytes()


def test_workers_do_not_change_results(pipeline_run, tmp_path):
    tmp, data, _ = pipeline_run
    cfg = _cfg_file(tmp_path, [data], models=["garch", "rech"], workers=2)
    assert cli.run(["fit", "-c", str(cfg)]) == 0
    a = json.loads((tmp_path / "out" / "sim" / "fit" / "summary.json").read_text())
    b = json.loads((tmp / "out" / "sim" / "fit" / "summary.json").read_text())
    assert a["models"][0] == b["models"][0] and a["models"][1] == b["models"][2]


def test_flags_override_config(tmp_path):
    cfg = _cfg_file(tmp_path, [tmp_path / "cfg.yaml"])
    c = ExperimentConfig.load(cfg, {"n_particles": 50, "models": ["garch"]})
    assert c.n_particles == 50 and c.models == ["garch"] and c.seed == 11


def test_digest_ignores_workers():
    a = ExperimentConfig(datasets=["x"], seed=1)
    b = ExperimentConfig(datasets=["x"], seed=1, workers=4)
    c = ExperimentConfig(datasets=["x"], seed=2)
    assert a.digest() == b.digest() != c.digest()


def test_exit_codes(tmp_path, capsys):
    assert cli.run(["fit", "--data", str(tmp_path / "missing.csv"), "--seed", "1"]) == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("date,close,rv5\n2020-01-01,100,1\n2020-01-02,101,-1\n2020-01-03,102,1\n")
    assert cli.run(["fit", "--data", str(bad), "--seed", "1"]) == 2
    assert "row 2" in capsys.readouterr().err
    noseed = tmp_path / "noseed.yaml"
    noseed.write_text(yaml.safe_dump({"datasets": [str(bad)]}))
    assert cli.run(["fit", "-c", str(noseed)]) == 1
    empty = _cfg_file(tmp_path, [bad], models=[])
    assert cli.run(["fit", "-c", str(empty)]) == 1


def test_estimation_error_exit_code(tmp_path, monkeypatch):
    from realrech import smc
    data = tmp_path / "d.csv"
    cli.run(["simulate", "--model", "garch", "--n", "120", "--seed", "1", "--out", str(data)])

    def boom(*a, **k):
        raise smc.EstimationError("tempering stalled")

    monkeypatch.setattr(smc, "likelihood_anneal", boom)
    assert cli.run(["fit", "--data", str(data), "--seed", "1", "--models", "garch",
                    "--output", str(tmp_path / "o")]) == 3


def test_missing_upstream_artifacts(tmp_path, capsys):
    data = tmp_path / "d.csv"
    cli.run(["simulate", "--model", "garch", "--n", "120", "--seed", "1", "--out", str(data)])
    cfg = _cfg_file(tmp_path, [data])
    assert cli.run(["evaluate", "-c", str(cfg)]) == 1
    assert "missing" in capsys.readouterr().err


def test_trade_single_agent(pipeline_run, tmp_path, capsys):
    tmp, data, _ = pipeline_run
    cfg = _cfg_file(tmp_path, [data], models=["garch"], output=str(tmp / "out"))
    assert cli.run(["trade", "-c", str(cfg)]) == 1
    assert "at least two" in capsys.readouterr().err


def test_checkpoint_model_mismatch(pipeline_run, tmp_path):
    tmp, data, cfg_path = pipeline_run
    cfg = ExperimentConfig.load(cfg_path)
    series = pipeline.load_series(cfg, str(data))
    out = tmp_path / "fc"
    out.mkdir()
    shutil.copy(tmp / "out" / "sim" / "forecast" / "garch.ckpt.json", out / "rech.ckpt.json")
    shutil.copy(tmp / "out" / "sim" / "forecast" / "garch.csv", out / "rech.csv")
    with pytest.raises(ConfigError, match="belongs to model"):
        pipeline.forecast_model(cfg, series, "rech", out, tmp / "out" / "sim" / "fit")


def test_zero_loss_when_forecasts_equal_proxies(pipeline_run, tmp_path):
    tmp, data, _ = pipeline_run
    out = tmp_path / "o"
    shutil.copytree(tmp / "out" / "sim", out / "sim")
    cfg = ExperimentConfig.load(_cfg_file(tmp_path, [data], output=str(out), models=["garch", "rech"]))
    series = pipeline.load_series(cfg, str(data))
    rv = series.scaled_proxies()["rv5"].values[series.split_index:]
    path = out / "sim" / "forecast" / "garch.csv"
    lines = path.read_text().splitlines()
    rows = [l.split(",") for l in lines[1:]]
    for r, v in zip(rows, rv):
        r[1] = repr(float(v))
    path.write_text("\n".join([lines[0]] + [",".join(r) for r in rows]) + "\n")
    pipeline.cmd_evaluate(cfg)
    rep = json.loads((out / "sim" / "evaluate" / "scores.json").read_text())["reports"][0]
    assert rep["model"] == "garch" and rep["mse"]["RV5"] == 0.0 and rep["mad"]["RV5"] == 0.0


def test_count_panel_three_datasets():
    per = {
        "d1": {"garch": {"pps": 1.2, "qloss_1": 9.0}, "realrech": {"pps": 1.1, "qloss_1": 9.5}},
        "d2": {"garch": {"pps": 1.0, "qloss_1": 8.0}, "realrech": {"pps": 1.0, "qloss_1": 7.0}},
        "d3": {"garch": {"pps": 1.4, "qloss_1": 6.0}, "realrech": {"pps": 1.3, "qloss_1": 6.5}},
    }
    counts = pipeline.count_panel(per, ["garch", "realrech"])
    assert counts["pps"] == {"garch": 1, "realrech": 3}
    assert counts["qloss_1"] == {"garch": 2, "realrech": 1}


def test_run_seed_distinct():
    seeds = {pipeline.run_seed(1, m, r) for m in ("garch", "rech") for r in range(3)}
    assert len(seeds) == 6 and all(0 <= s < 2 ** 63 for s in seeds)


def test_simulate_bad_params(tmp_path):
    assert cli.run(["simulate", "--model", "garch", "--seed", "1", "--out", str(tmp_path / "x.csv"),
                    "--params", '{"alpha": 0.5, "beta": 0.6}']) == 1
    assert cli.run(["simulate", "--model", "garch", "--seed", "1", "--out", str(tmp_path / "x.csv"),
                    "--params", "[1, 2]"]) == 1
