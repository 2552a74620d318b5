from __future__ import annotations

import json
from pathlib import Path

import pytest

from spectronet.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_parser, main
from spectronet.config import RunConfig
from spectronet.experiments import strip_wall_clock

FIXTURES = Path(__file__).parent / "fixtures"
US8K = str(FIXTURES / "us8k_mini")
SC = str(FIXTURES / "sc_mini")


def _only_run(out: Path, command: str) -> Path:
    (run,) = [p for p in out.iterdir() if p.name.startswith(f"{command}-")]
    return run


class TestParser:
    def test_subcommands(self):
        p = build_parser()
        args = p.parse_args(["ablate", "--fractions", "0.25,1.0", "--iterations", "3", "--seed", "2"])
        assert (args.fractions, args.iterations, args.seed) == ([0.25, 1.0], 3, 2)
        args = p.parse_args(["transfer", "--tasks", "sc_lr2, sc_core20"])
        assert args.tasks == ["sc_lr2", "sc_core20"]

    def test_usage_errors_exit_two(self):
        for argv in ([], ["fly"], ["featurize", "--dataset", "nope", "--root", "x"], ["ablate", "--fractions", "a,b"]):
            with pytest.raises(SystemExit) as exc:
                main(argv)
            assert exc.value.code == EXIT_USAGE


class TestExitCodes:
    def test_bad_config_value(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[train]\nbogus = 1\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE
        assert "bogus" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.toml")]) == EXIT_USAGE

    def test_bad_fraction_override(self, tmp_path):
        assert main(["ablate", "--fractions", "0", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_runtime_failure(self, tmp_path, capsys):
        code = main(["train", "--root", str(tmp_path / "missing"), "--out", str(tmp_path / "o"), "--desk"])
        assert code == EXIT_RUNTIME
        assert "error" in capsys.readouterr().err

    def test_report_on_garbage(self, tmp_path):
        (tmp_path / "r.json").write_text("{}")
        assert main(["report", str(tmp_path / "r.json"), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


class TestCommands:
    def test_featurize(self, tmp_path):
        out = tmp_path / "feat"
        assert main(["featurize", "--dataset", "sc_lr2", "--root", SC, "--out", str(out)]) == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["entries"]) == 6 and manifest["clip_seconds"] == 1.0
        assert all(Path(p).exists() for p in manifest["entries"].values())
        assert len(list(out.glob("*.melf"))) == 6
        assert RunConfig.load(out / "config.toml").features.cache_dir == str(out)

    def test_ablate_then_report(self, tmp_path, capsys):
        out = tmp_path / "runs"
        argv = ["ablate", "--sc-root", SC, "--fractions", "0.5,1.0", "--iterations", "2", "--desk", "--seed", "1", "--out", str(out)]
        assert main(argv) == EXIT_OK
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        run = _only_run(out, "ablate")
        assert summary["report"] == str(run / "report.json")
        assert run.name.endswith("-seed1")
        saved = RunConfig.load(run / "config.toml")
        assert saved.ablation.fractions == [0.5, 1.0] and saved.seed == 1 and saved.model.preset == "tiny"
        assert len((run / "runs.csv").read_text().splitlines()) == 5

        again = tmp_path / "again"
        assert main(["report", str(run / "report.json"), "--out", str(again)]) == EXIT_OK
        assert (again / "runs.csv").read_text() == (run / "runs.csv").read_text()

    def test_train_twice_identical(self, tmp_path):
        cfg = RunConfig()
        cfg.train.test_folds = [7]
        cfg.train.batch_size = 8
        cfg.save(tmp_path / "c.toml")
        docs = []
        for name in ("a", "b"):
            out = tmp_path / name
            argv = ["train", "--config", str(tmp_path / "c.toml"), "--root", US8K, "--desk", "--seed", "5", "--out", str(out)]
            assert main(argv) == EXIT_OK
            docs.append(json.loads((_only_run(out, "train") / "report.json").read_text()))
        assert docs[0]["duration_s"] > 0
        a, b = (strip_wall_clock(d) for d in docs)
        # Output locations differ by design; everything else must match.
        for d in (a, b):
            d["config"].pop("out_dir")
        assert a == b
