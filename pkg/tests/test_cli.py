"""Command-line surface: exit codes, artifact side effects, stdout shapes."""
import json
import os
import subprocess
import sys

import pytest
import yaml

from structbo import persist
from structbo.benchmark import mini_space
from structbo.cli import main
from structbo.space import dump_space


@pytest.fixture()
def workdir(tmp_path):
    (tmp_path / "space.yaml").write_text(dump_space(mini_space()))
    return tmp_path


def write_config(workdir, name="run.yaml", **overrides):
    raw = {
        "space": str(workdir / "space.yaml"),
        "seed": 7,
        "budget": 16,
        "batch_size": 4,
        "folds": 3,
        "metric": "auc_roc",
        "artifacts": str(workdir / overrides.pop("artifacts", "out")),
        "backend": {"kind": "synthetic", "noise_sd": 0.02, "subspaces": 3,
                    "benchmark_seed": 5},
    }
    raw.update(overrides)
    path = workdir / name
    path.write_text(yaml.safe_dump(raw))
    return str(path)


@pytest.fixture()
def finished_run(workdir):
    config_path = write_config(workdir)
    assert main(["run", "--config", config_path]) == 0
    return workdir, config_path, str(workdir / "out")


class TestRun:
    def test_run_writes_artifacts(self, finished_run):
        _, _, artifacts = finished_run
        for name in (persist.HISTORY_FILE, persist.CHECKPOINT_FILE,
                     persist.ENSEMBLE_FILE, persist.REPORT_TEXT_FILE):
            assert os.path.isfile(os.path.join(artifacts, name))

    def test_run_refuses_dirty_dir_without_force(self, finished_run, capsys):
        _, config_path, _ = finished_run
        assert main(["run", "--config", config_path]) == 1
        assert "already holds a run" in capsys.readouterr().err
        assert main(["run", "--config", config_path, "--force"]) == 0

    def test_bad_config_exits_two(self, workdir, capsys):
        config_path = write_config(workdir, metric="accuracy")
        assert main(["run", "--config", config_path]) == 2
        assert "metric" in capsys.readouterr().err

    def test_missing_config_exits_two(self, workdir, capsys):
        assert main(["run", "--config", str(workdir / "nope.yaml")]) == 2
        assert "not found" in capsys.readouterr().err

    def test_unknown_subcommand_exits_via_argparse(self):
        with pytest.raises(SystemExit):
            main(["frobnicate"])


class TestResume:
    def test_resume_completed_run_is_noop(self, finished_run, capsys):
        _, config_path, artifacts = finished_run
        before = open(os.path.join(artifacts, persist.CHECKPOINT_FILE),
                      "rb").read()
        assert main(["resume", "--config", config_path]) == 0
        after = open(os.path.join(artifacts, persist.CHECKPOINT_FILE),
                     "rb").read()
        assert before == after

    def test_resume_without_artifacts_exits_one(self, workdir, capsys):
        config_path = write_config(workdir, artifacts="never_ran")
        assert main(["resume", "--config", config_path]) == 1
        assert "checkpoint not found" in capsys.readouterr().err

    def test_resume_tampered_checkpoint_exits_one(self, finished_run, capsys):
        _, config_path, artifacts = finished_run
        path = os.path.join(artifacts, persist.CHECKPOINT_FILE)
        envelope = json.load(open(path))
        envelope["payload"]["t"] = 999
        with open(path, "w") as f:
            json.dump(envelope, f)
        assert main(["resume", "--config", config_path]) == 1
        assert "hash mismatch" in capsys.readouterr().err


class TestReport:
    def test_report_prints_and_rewrites(self, finished_run, capsys):
        _, _, artifacts = finished_run
        text_path = os.path.join(artifacts, persist.REPORT_TEXT_FILE)
        original = open(text_path).read()
        os.remove(text_path)
        assert main(["report", "--artifacts", artifacts]) == 0
        assert capsys.readouterr().out == original
        assert open(text_path).read() == original

    def test_report_mentions_best_pipeline(self, finished_run, capsys):
        _, _, artifacts = finished_run
        main(["report", "--artifacts", artifacts])
        out = capsys.readouterr().out
        assert "best score" in out
        assert "evaluations" in out

    def test_report_on_missing_dir_exits_one(self, workdir, capsys):
        assert main(["report", "--artifacts", str(workdir / "void")]) == 1


class TestRules:
    def test_rules_prints_table(self, finished_run, capsys):
        _, _, artifacts = finished_run
        assert main(["rules", "--artifacts", artifacts,
                     "--min-support", "3", "--min-confidence", "0.5"]) == 0
        out = capsys.readouterr().out
        assert "stratum:" in out or "no rules" in out

    def test_rules_writes_files(self, finished_run, capsys):
        wd, _, artifacts = finished_run
        out_dir = str(wd / "rules_out")
        assert main(["rules", "--artifacts", artifacts, "--min-support", "3",
                     "--min-confidence", "0.5", "--out", out_dir]) == 0
        capsys.readouterr()
        assert os.path.isfile(os.path.join(out_dir, "rules.txt"))
        jsonl = os.path.join(out_dir, "rules.jsonl")
        assert os.path.isfile(jsonl)
        with open(jsonl) as f:
            for line in f:
                payload = json.loads(line)
                assert {"conditions", "stratum", "support",
                        "posterior_mean"} <= payload.keys()


class TestMetaFitAndCalibrate:
    def features_file(self, workdir, name="feats.yaml",
                      values=(500.0, 20.0, 0.4)):
        path = workdir / name
        path.write_text(yaml.safe_dump({
            "n_samples": values[0], "n_features": values[1],
            "minority_fraction": values[2]}))
        return str(path)

    def test_round_trip_through_repository(self, finished_run, capsys):
        wd, config_path, _ = finished_run
        repo = str(wd / "repo")
        feats = self.features_file(wd)
        assert main(["meta-fit", "--config", config_path,
                     "--dataset-id", "demo-a", "--features", feats,
                     "--repository", repo]) == 0
        assert os.path.isfile(os.path.join(repo, "demo-a.json"))

        second = write_config(wd, name="run_b.yaml", seed=8,
                              artifacts="out_b")
        assert main(["run", "--config", second]) == 0
        assert main(["meta-fit", "--config", second,
                     "--dataset-id", "demo-b",
                     "--features", self.features_file(wd, "feats_b.yaml",
                                                      (800.0, 35.0, 0.3)),
                     "--repository", repo]) == 0

        out_path = str(wd / "prior.json")
        assert main(["calibrate", "--repository", repo, "--features",
                     self.features_file(wd, "feats_q.yaml", (600.0, 25.0, 0.35)),
                     "--out", out_path]) == 0
        capsys.readouterr()
        payload = json.load(open(out_path))
        prior = persist.calibrated_from_dict(payload)
        assert prior.M >= 1
        assert sum(w for _, w in prior.eta) == pytest.approx(1.0, abs=1e-9)
        assert {d for d, _ in prior.eta} == {"demo-a", "demo-b"}

    def test_calibrate_prints_json_without_out(self, finished_run, capsys):
        wd, config_path, _ = finished_run
        repo = str(wd / "repo")
        feats = self.features_file(wd)
        main(["meta-fit", "--config", config_path, "--dataset-id", "solo",
              "--features", feats, "--repository", repo])
        capsys.readouterr()
        assert main(["calibrate", "--repository", repo,
                     "--features", feats]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["eta"] == [["solo", 1.0]]

    def test_calibrate_empty_repository_exits_one(self, workdir, capsys):
        repo = str(workdir / "repo")
        os.makedirs(repo)
        assert main(["calibrate", "--repository", repo,
                     "--features", self.features_file(workdir)]) == 1
        assert "no" in capsys.readouterr().err

    def test_meta_fit_requires_finished_run(self, workdir, capsys):
        config_path = write_config(workdir, artifacts="never_ran")
        assert main(["meta-fit", "--config", config_path,
                     "--dataset-id", "x",
                     "--features", self.features_file(workdir),
                     "--repository", str(workdir / "repo")]) == 1

    def test_warmstarted_run_via_meta_block(self, finished_run, capsys):
        wd, config_path, _ = finished_run
        repo = str(wd / "repo")
        feats = self.features_file(wd)
        main(["meta-fit", "--config", config_path, "--dataset-id", "seen",
              "--features", feats, "--repository", repo])
        capsys.readouterr()
        warm = write_config(
            wd, name="warm.yaml", seed=21, budget=12, artifacts="out_warm",
            meta={"repository": repo, "mode": "similarity",
                  "temperature": 1.0,
                  "features": {"n_samples": 520.0, "n_features": 22.0,
                               "minority_fraction": 0.38}})
        assert main(["run", "--config", warm]) == 0
        records = persist.read_history(str(wd / "out_warm"))
        assert len(records) == 12
        assert records[0].map_snapshot is not None


class TestConsoleScript:
    def test_installed_entry_point(self, workdir):
        config_path = write_config(workdir, budget=8, batch_size=4)
        proc = subprocess.run(
            [sys.executable, "-m", "structbo.cli", "run",
             "--config", config_path],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        proc = subprocess.run(
            ["structbo", "report", "--artifacts", str(workdir / "out")],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert "best score" in proc.stdout
