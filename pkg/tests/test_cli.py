import glob
import json
import os

import pytest

import dispatch_run
from cli import main
from data_io import read_checkpoint
from utils.errors import DivergenceError

TINY = [
    "--set", "encoder.layers=2", "--set", "encoder.width=16", "--set", "encoder.mlp_hidden=32",
    "--set", "train.epochs=1", "--set", "train.batch_size=32", "--set", "train.progress=false",
    "--set", "context.K=2", "--set", "context.r1=1", "--set", "context.r2=3", "--set", "context.context_layers=2",
]


def run_dirs(out) -> set:
    return set(glob.glob(os.path.join(str(out), "*-*")))


def invoke(out, *argv, tiny=True):
    """Exit code and the run directory the invocation created (None if it reused one)."""
    before = run_dirs(out)
    code = main(list(argv) + ["--out", str(out)] + (TINY if tiny else []))
    created = run_dirs(out) - before
    return code, created.pop() if len(created) == 1 else None


def read_json(*parts):
    with open(os.path.join(*parts)) as f:
        return json.load(f)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    code, gen_dir = invoke(out, "gen", "--kind", "transfer", "--size", "64", "--seed", "0")
    assert code == 0
    return out, gen_dir


class TestGenAndSplit:
    def test_gen_writes_benchmark_files(self, workspace):
        _, gen_dir = workspace
        for name in ("graphs.jsonl", "graphs.jsonl.manifest.json", "split.json", "pretrain.jsonl", "motifs.json",
                     "config.txt", "run.json"):
            assert os.path.exists(os.path.join(gen_dir, name)), name
        record = read_json(gen_dir, "run.json")
        assert record["command"] == "gen"
        assert record["status"] == "ok"
        assert record["args"] == {"kind": "transfer", "size": 64}
        assert record["config"]["train.seed"] == "0"
        assert "graphs.jsonl" in record["artifacts"]
        assert os.path.basename(gen_dir) == f"gen-{record['config_hash'][:12]}"

    def test_scaffold_split_is_byte_identical_across_runs(self, tmp_path, capsys):
        corpus = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data", "corpus.csv")
        code, parse_dir = invoke(tmp_path / "a", "parse", "--data", corpus)
        assert code == 0
        data = os.path.join(parse_dir, "graphs.jsonl")
        contents = []
        for root in ("b", "c"):
            code, split_dir = invoke(tmp_path / root, "split", "--data", data, "--rule", "scaffold")
            assert code == 0
            with open(os.path.join(split_dir, "split.json"), "rb") as f:
                contents.append(f.read())
        assert contents[0] == contents[1]
        assert "scaffold split" in capsys.readouterr().out

    def test_scaffold_command_lists_every_molecule(self, tmp_path):
        corpus = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data", "corpus.csv")
        code, run_dir = invoke(tmp_path, "scaffold", "--data", corpus)
        assert code == 0
        with open(os.path.join(run_dir, "scaffolds.csv")) as f:
            lines = f.read().splitlines()
        assert lines[0] == "index,name,scaffold_key,scaffold_smiles"
        assert len(lines) == 55


class TestPretrainFinetune:
    def test_pretrain_then_finetune_records_init(self, workspace, capsys):
        out, gen_dir = workspace
        code, pre_dir = invoke(out, "pretrain", "--task", "context", "--data", os.path.join(gen_dir, "pretrain.jsonl"))
        assert code == 0
        ckpt = os.path.join(pre_dir, "encoder.ckpt")
        digest = read_checkpoint(ckpt).content_hash
        assert read_json(pre_dir, "run.json")["summary"]["checkpoint"] == digest
        with open(os.path.join(pre_dir, "curves.csv")) as f:
            assert len(f.read().splitlines()) == 2

        code, ft_dir = invoke(out, "finetune", "--data", os.path.join(gen_dir, "graphs.jsonl"),
                              "--split", os.path.join(gen_dir, "split.json"), "--init", ckpt)
        assert code == 0
        report = read_json(ft_dir, "report.json")
        assert report["init_checkpoint"] == digest
        assert read_json(ft_dir, "seed_0", "report.json") == report
        best = os.path.join(ft_dir, "seed_0", "best.ckpt")
        assert read_checkpoint(best).header["provenance"]["init_checkpoint"] == digest

        code, eval_dir = invoke(out, "eval", "--ckpt", best, "--data", os.path.join(gen_dir, "graphs.jsonl"),
                                "--split", os.path.join(gen_dir, "split.json"))
        assert code == 0
        evaluation = read_json(eval_dir, "eval.json")
        assert evaluation["mean"] == pytest.approx(report["mean_auc"], abs=1e-6)

        capsys.readouterr()
        code, inspect_dir = invoke(out, "inspect", "--ckpt", ckpt)
        assert code == 0
        printed = capsys.readouterr().out
        assert "format v1 gin layers=2 width=16" in printed
        summary = read_json(inspect_dir, "inspect.json")
        assert summary["content_hash"] == digest
        assert summary["provenance"]["objective"] == "context"
        assert not any(name.startswith("context.") for name in summary["shapes"])

    def test_several_seeds(self, workspace):
        out, gen_dir = workspace
        code, ft_dir = invoke(out, "finetune", "--data", os.path.join(gen_dir, "graphs.jsonl"),
                              "--split", os.path.join(gen_dir, "split.json"), "--seeds", "2", "--seed", "3")
        assert code == 0
        summary = read_json(ft_dir, "summary.json")
        assert summary["seeds"] == [3, 4]
        assert summary["completed"] == 2
        assert os.path.exists(os.path.join(ft_dir, "seed_4", "curves.csv"))

    def test_every_seed_diverging_exits_with_divergence(self, workspace, capsys, monkeypatch):
        out, gen_dir = workspace

        def diverge(*args, **kwargs):
            raise DivergenceError("train loss is nan")

        monkeypatch.setattr(dispatch_run, "finetune", diverge)
        code, _ = invoke(out, "finetune", "--data", os.path.join(gen_dir, "graphs.jsonl"),
                         "--split", os.path.join(gen_dir, "split.json"), "--seeds", "2")
        assert code == 3
        assert "error=divergence" in capsys.readouterr().err

    def test_pretraining_that_never_steps_exits_with_data_error(self, tmp_path, capsys):
        data = tmp_path / "atoms.csv"
        data.write_text("smiles\nC\nO\nN\nS\n")
        code, run_dir = invoke(tmp_path / "runs", "pretrain", "--task", "context", "--data", str(data))
        assert code == 2
        assert "error=empty_input" in capsys.readouterr().err
        assert not os.path.exists(os.path.join(run_dir, "encoder.ckpt"))

    def test_supervised_pretraining_against_its_own_test_set_is_leakage(self, workspace, capsys):
        out, gen_dir = workspace
        data = os.path.join(gen_dir, "graphs.jsonl")
        code, run_dir = invoke(out, "pretrain", "--task", "supervised", "--data", data, "--downstream-test", data)
        assert code == 2
        err = [line for line in capsys.readouterr().err.splitlines() if line.startswith("error=")]
        assert len(err) == 1 and err[0].startswith("error=leakage")
        assert read_json(run_dir, "run.json")["status"] == "failed"

    def test_supervised_pretraining_needs_downstream_test(self, workspace, capsys):
        out, gen_dir = workspace
        code, _ = invoke(out, "pretrain", "--task", "supervised", "--data", os.path.join(gen_dir, "pretrain.jsonl"))
        assert code == 1
        assert "error=configuration" in capsys.readouterr().err

    def test_supervised_pretraining_on_disjoint_data(self, workspace):
        out, gen_dir = workspace
        code, run_dir = invoke(out, "pretrain", "--task", "supervised", "--data", os.path.join(gen_dir, "pretrain.jsonl"),
                               "--downstream-test", os.path.join(gen_dir, "graphs.jsonl"),
                               "--split", os.path.join(gen_dir, "split.json"))
        assert code == 0
        assert read_checkpoint(os.path.join(run_dir, "encoder.ckpt")).header["provenance"]["objective"] == "supervised"


class TestGradcheckAndErrors:
    def test_gradcheck_passes_and_reruns_from_run_json(self, tmp_path, capsys):
        code, run_dir = invoke(tmp_path, "gradcheck", tiny=False)
        assert code == 0
        assert "max_relative_error=" in capsys.readouterr().out
        result = read_json(run_dir, "gradcheck.json")
        assert result["max_relative_error"] < 1e-4
        assert set(result["errors"]) == {"supervised", "context", "mask", "edgepred"}

        code, again = invoke(tmp_path, "gradcheck", "--config", os.path.join(run_dir, "run.json"), tiny=False)
        assert code == 0
        assert again is None

        code, _ = invoke(tmp_path, "inspect", "--config", os.path.join(run_dir, "run.json"), tiny=False)
        assert code == 1

    @pytest.mark.parametrize("argv", [
        ["pretrain", "--task", "infomax"],
        ["split", "--rule", "scaffold"],
        ["finetune", "--seeds", "two"],
        ["frobnicate"],
        ["gen", "--set", "encoder.layers"],
    ])
    def test_usage_errors_print_one_line(self, tmp_path, capsys, argv):
        assert main(argv + ["--out", str(tmp_path)]) == 1
        err = [line for line in capsys.readouterr().err.splitlines() if line.startswith("error=")]
        assert len(err) == 1
        assert err[0].startswith("error=usage reason=")

    def test_unknown_config_key(self, tmp_path, capsys):
        assert main(["gen", "--kind", "transfer", "--set", "encoder.depth=3", "--out", str(tmp_path)]) == 1
        assert "error=configuration" in capsys.readouterr().err

    def test_missing_data_file(self, tmp_path, capsys):
        code = main(["split", "--data", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path)])
        assert code == 2
        assert "error=data" in capsys.readouterr().err

    def test_truncated_checkpoint(self, tmp_path, capsys):
        path = tmp_path / "broken.ckpt"
        path.write_bytes(b"\x10\x00\x00")
        assert main(["inspect", "--ckpt", str(path), "--out", str(tmp_path / "runs")]) == 2
        assert "error=hash_mismatch" in capsys.readouterr().err
