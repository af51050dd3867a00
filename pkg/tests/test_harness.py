import csv
import json
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from respdistill.dataset import DatasetSpec
from respdistill.ensemble import LogitBank
from respdistill.exceptions import ConfigError
from respdistill.harness import cli, runner
from respdistill.harness.config import DEFAULT_CONFIG, ExperimentConfig, parse_config
from respdistill.harness.svg import line_chart, read_points
from respdistill.model import TrainConfig
from respdistill.softlabel import SoftLabelPolicy

TINY_INI = """
[dataset]
n_patients = 12
cycles_per_patient = 10
feature_dim = 8
[teachers]
count = 3
epochs = 4
batch_size = 32
[student]
epochs = 4
batch_size = 32
[experiment]
seeds = 1, 2
k_values = 0, 1, 3
[ablation]
teacher_var_k = 2
mean_k = 2
random_k = 3
curated_m = 2
raw_logit_k = 2
[second_gen]
trials = 2
teachers_per_trial = 2
policy = mean:2
"""


def tiny_config(out):
    return parse_config(TINY_INI).with_overrides(output=out)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    cfg = tiny_config(out)
    runner.cmd_train_teachers(cfg)
    sweep = runner.cmd_sweep_k(cfg)
    ablation = runner.cmd_ablate(cfg)
    second = runner.cmd_second_gen(cfg)
    report = runner.cmd_report(out)
    return {"out": out, "cfg": cfg, "sweep": sweep, "ablation": ablation, "second": second, "report": report}


# -- config ---------------------------------------------------------------


def test_default_config_text_parses_to_defaults():
    assert parse_config(DEFAULT_CONFIG) == ExperimentConfig()


def test_config_overrides():
    cfg = tiny_config("x")
    assert cfg.n_teachers == 3
    assert cfg.teacher.epochs == 4 and cfg.teacher.mask_width == 4
    assert cfg.seeds == (1, 2)
    assert cfg.dataset.feature_dim == 8
    assert cfg.with_overrides(seed=7).seeds == (7,)


@pytest.mark.parametrize(
    "text",
    [
        "[bogus]\nx = 1\n",
        "[teachers]\nepochs = many\n",
        "[experiment]\nseeds =\n",
        "[experiment]\nk_values = 0, 99\n",
        "[experiment]\nsweep_policies = mean, best\n",
        "[second_gen]\npolicy = mean\n",
        "[dataset]\nclass_priors = 0.5, 0.5\n",
        "not an ini file",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_csv_path_relative_to_config(tmp_path):
    (tmp_path / "c.ini").write_text("[dataset]\ncsv = data/d.csv\n")
    from respdistill.harness.config import load_config

    assert load_config(tmp_path / "c.ini").csv_path == str(tmp_path / "data" / "d.csv")


# -- runs and statuses ------------------------------------------------------


def test_diverged_rule():
    assert runner.diverged([1.0, float("nan")])
    assert runner.diverged([1.0, 1.2])
    assert runner.diverged([1.0, -0.5, -2.0])
    assert not runner.diverged([1.0, 0.8, 0.5])
    noisy = [1.0, 1.1]
    assert runner.run_status(SoftLabelPolicy.random(3), noisy) == "ok"
    assert runner.run_status(SoftLabelPolicy.raw_logit(3), noisy) == "diverged"


def test_sweep_row_count(pipeline):
    cfg = pipeline["cfg"]
    rows = runner.read_runs_csv(pipeline["out"] / "sweep" / "sweep.csv")
    expected = len(cfg.k_values) * len(cfg.sweep_policies) * len(cfg.seeds) + len(cfg.k_values)
    assert len(rows) == expected
    assert list(rows[0]) == runner.RUN_HEADER


def test_sweep_k0_only_hard(tmp_path):
    cfg = replace(tiny_config(tmp_path), k_values=(0,))
    results, ens = runner.cmd_sweep_k(cfg)
    assert {r.policy for r in results} == {"hard"}
    assert len(ens) == 1 and ens[0].metrics is None


def test_sweep_rejects_k_above_bank(tmp_path):
    cfg = tiny_config(tmp_path)
    runner.cmd_train_teachers(cfg, count=2)
    with pytest.raises(ConfigError):
        runner.cmd_sweep_k(cfg)


def test_svg_points_equal_csv(pipeline):
    out = pipeline["out"] / "sweep"
    points = read_points((out / "sweep.svg").read_text())
    with open(out / "sweep_summary.csv", newline="") as fh:
        summary = list(csv.DictReader(fh))
    for row in summary:
        pts = dict(points[f"student ({row['policy']})"])
        assert pts[float(row["k"])] == float(row["score_mean"])
    ens = {r["k"]: r["score"] for r in runner.read_runs_csv(out / "sweep.csv") if r["policy"] == "ensemble"}
    for x, y in points["teacher ensemble"]:
        assert ens[int(x)] == y
    # replotting from the CSV gives the same chart
    replot = runner.cmd_plot(out / "sweep.csv", pipeline["out"] / "replot.svg")
    assert read_points(Path(replot).read_text()) == points


def test_svg_drops_nan_and_escapes():
    svg = line_chart({"a<b": [(0, 1.0), (1, float("nan")), (2, 3.0)]}, "t & t")
    assert read_points(svg) == {"a<b": [(0.0, 1.0), (2.0, 3.0)]}


def test_ablation_has_eight_arms(pipeline):
    rows, _ = pipeline["ablation"]
    assert [r["arm"] for r in rows] == [
        "baseline", "noised_fixed", "noised_teacher_var", "single_teacher",
        "mean_teacher", "random_teacher", "curated_teacher", "raw_logit",
    ]
    with open(pipeline["out"] / "ablation" / "ablation.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 8


def test_noised_zero_equals_baseline(tmp_path):
    cfg = tiny_config(tmp_path)
    cfg = replace(cfg, ablation=replace(cfg.ablation, noised_var=0.0))
    _, results = runner.cmd_ablate(cfg)
    by = {r.run_id: r for r in results}
    for seed in cfg.seeds:
        a, b = by[f"ablate-baseline-s{seed}"], by[f"ablate-noised_fixed-s{seed}"]
        np.testing.assert_array_equal(a.metrics.confusion, b.metrics.confusion)
        assert a.loss_trace == b.loss_trace


def test_hard_policy_equals_k0_sweep_run(pipeline):
    ws = runner.Workspace(pipeline["cfg"])
    r = ws.run(SoftLabelPolicy.hard(), 1, run_id="check-hard", write=False)
    sweep = {x.run_id: x for x in pipeline["sweep"][0]}
    k0 = sweep["sweep-mean-k0-s1"]
    np.testing.assert_array_equal(r.metrics.confusion, k0.metrics.confusion)
    assert r.final_loss == k0.final_loss


def test_mean1_random1_same_result(pipeline):
    ws = runner.Workspace(pipeline["cfg"])
    a = ws.run(SoftLabelPolicy.mean(1), 2, write=False)
    b = ws.run(SoftLabelPolicy.random(1), 2, write=False)
    np.testing.assert_array_equal(a.metrics.confusion, b.metrics.confusion)
    assert a.loss_trace == b.loss_trace


def test_hard_arm_never_reads_bank(pipeline):
    ws = runner.Workspace(pipeline["cfg"])
    bank = ws.load_bank()
    ws.run(SoftLabelPolicy.hard(), 1, write=False)
    assert bank.reads == 0
    ws.run(SoftLabelPolicy.mean(2), 1, write=False)
    assert bank.reads > 0


def test_distill_needs_bank(tmp_path):
    ws = runner.Workspace(tiny_config(tmp_path))
    with pytest.raises(runner.DataError):
        ws.run(SoftLabelPolicy.mean(2), 1)


def test_distill_policy_bank_mismatch(pipeline):
    ws = runner.Workspace(pipeline["cfg"])
    with pytest.raises(ConfigError):
        ws.run(SoftLabelPolicy.mean(4), 1, write=False)


def test_every_result_has_checkpoint_and_logits(pipeline):
    results, _ = pipeline["report"]
    for r in results:
        d = pipeline["out"] / "runs" / r.run_id
        assert (d / "checkpoint.json").is_file()
        assert (d / "logits.jsonl").is_file()


def test_bank_manifest(pipeline):
    manifest = json.loads((pipeline["out"] / "bank" / "manifest.json").read_text())
    scores = [t["score"] for t in manifest["teachers"]]
    assert [t["seed"] for t in manifest["teachers"]] == [1, 2, 3]
    assert manifest["mean_score"] == pytest.approx(np.mean(scores), abs=1e-12)
    assert all((pipeline["out"] / t["checkpoint"]).is_file() for t in manifest["teachers"])


def test_single_teacher_bank_mean_is_its_score(tmp_path):
    bank = runner.cmd_train_teachers(tiny_config(tmp_path), count=1)
    manifest = json.loads((tmp_path / "bank" / "manifest.json").read_text())
    assert manifest["mean_score"] == bank.manifest[0]["score"]


def test_report_means_match_hand_average(pipeline):
    out = pipeline["out"]
    summary = json.loads((out / "report.json").read_text())
    rows = runner.read_runs_csv(out / "report.csv")
    assert [r["run_id"] for r in rows] == sorted(r["run_id"] for r in rows)
    for g in summary["groups"]:
        if g["mean"] is None:
            continue
        picked = [r for r in rows if r["run_id"] in g["run_ids"] and math.isfinite(r["score"])]
        assert g["mean"]["score"] == pytest.approx(sum(r["score"] for r in picked) / len(picked), abs=1e-9)
        if len(picked) == 1:
            assert g["std"]["score"] == 0.0


def test_report_idempotent(pipeline):
    out = pipeline["out"]
    before = (out / "report.csv").read_bytes(), (out / "report.json").read_bytes()
    runner.cmd_report(out)
    assert ((out / "report.csv").read_bytes(), (out / "report.json").read_bytes()) == before


def test_report_empty_dir(tmp_path):
    with pytest.raises(runner.DataError):
        runner.cmd_report(tmp_path)


def test_second_gen_outputs(pipeline):
    s = pipeline["second"]
    assert len(s["trials"]) == 2
    assert s["trials"][1]["teacher_seeds"] == [3, 4]
    bank = LogitBank.load(pipeline["out"] / "second_gen" / "trial0" / "bank")
    assert bank.n_teachers == len(pipeline["cfg"].seeds)


def _tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_pipeline_byte_determinism(tmp_path):
    trees = []
    for name in ("a", "b"):
        cfg = tiny_config(tmp_path / name)
        runner.cmd_train_teachers(cfg)
        runner.cmd_sweep_k(cfg, threads=2 if name == "b" else 1)
        runner.cmd_report(cfg.output)
        trees.append(_tree_bytes(tmp_path / name))
    assert trees[0].keys() == trees[1].keys()
    assert trees[0] == trees[1]


def test_gen_data_csv_reused(tmp_path):
    cfg = tiny_config(tmp_path)
    path = runner.cmd_gen_data(cfg)
    from_csv = replace(cfg, csv_path=str(path))
    a, b = runner.prepare_data(cfg), runner.prepare_data(from_csv)
    assert [r.sample_id for r in a.test] == [r.sample_id for r in b.test]
    assert {r.sample_id for r in a.fit} == {r.sample_id for r in b.fit}


def test_validation_split_is_patient_disjoint(pipeline):
    s = runner.prepare_data(pipeline["cfg"])
    fit = {r.patient_id for r in s.fit}
    val = {r.patient_id for r in s.validation}
    test = {r.patient_id for r in s.test}
    assert not (fit & val or fit & test or val & test)
    assert len(val) == 1  # 20% of 7 training patients, floored


# -- CLI ----------------------------------------------------------------------


def _write_ini(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


def test_cli_show_config(capsys):
    assert cli.main(["show-config"]) == 0
    assert capsys.readouterr().out == DEFAULT_CONFIG


def test_cli_train_and_distill(tmp_path, capsys):
    ini = _write_ini(tmp_path)
    out = tmp_path / "o"
    assert cli.main(["--config", str(ini), "--out", str(out), "train-teachers"]) == 0
    assert cli.main(["distill", "--config", str(ini), "--out", str(out), "--seed", "3", "--policy", "mean:2"]) == 0
    assert (out / "runs" / "mean-2-s3" / "result.json").is_file()
    assert cli.main(["ensemble-eval", "--config", str(ini), "--out", str(out), "--k", "1", "3"]) == 0
    assert "k=  3" in capsys.readouterr().out


def test_cli_exit_code_config(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[nope]\n")
    assert cli.main(["--config", str(bad), "report"]) == 2
    assert cli.main(["distill", "--policy", "mean:0", "--out", str(tmp_path)]) == 2


def test_cli_exit_code_data(tmp_path):
    assert cli.main(["report", "--out", str(tmp_path)]) == 3
    csv_path = tmp_path / "d.csv"
    csv_path.write_text("sample_id,patient_id,split,label,f0\na,p,train,9,1.0\n")
    ini = tmp_path / "c.ini"
    ini.write_text("[dataset]\ncsv = d.csv\n")
    assert cli.main(["--config", str(ini), "--out", str(tmp_path / "o"), "train-teachers"]) == 3


def test_cli_exit_code_io(tmp_path):
    assert cli.main(["--config", str(tmp_path / "missing.ini"), "report"]) == 4
    blocker = tmp_path / "file"
    blocker.write_text("x")
    ini = _write_ini(tmp_path)
    assert cli.main(["--config", str(ini), "--out", str(blocker / "sub"), "train-teachers", "--count", "1"]) == 4


@pytest.mark.slow
def test_five_default_teachers_within_budget(tmp_path):
    cfg = ExperimentConfig(output=str(tmp_path))
    t0 = time.perf_counter()
    bank = runner.cmd_train_teachers(cfg, count=5)
    elapsed = time.perf_counter() - t0
    print(f"5 default teachers trained in {elapsed:.1f}s")
    assert bank.n_teachers == 5
    assert elapsed < 300
