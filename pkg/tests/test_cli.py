import json
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

import synthetic as syn
from logitfuse.cli import main
from logitfuse.decoder import read_traces


@pytest.fixture(scope="module")
def models(tmp_path_factory):
    root = tmp_path_factory.mktemp("models")
    paths = {}
    for name, corpus in [
        ("large", syn.mixed_text(1, 40_000)),
        ("ft", syn.domain_a_text(2, 20_000)),
        ("base", syn.general_text(4, 20_000)),
    ]:
        path = root / f"{name}.json"
        code = main([
            "train-ngram", "--order", "3",
            "--input", _dump(root / f"{name}.txt", corpus),
            "--out", str(path),
        ])
        assert code == 0
        paths[name] = str(path)
    return paths


def _dump(path, data):
    Path(path).write_bytes(data)
    return str(path)


def run_decode(models, capsys, *extra):
    code = main([
        "decode",
        "--large", f"ngram:{models['large']}",
        "--expert", f"a=ngram:{models['ft']},ngram:{models['base']}",
        "--prompt", "jq", "--max-tokens", "6", *extra,
    ])
    out = capsys.readouterr().out
    return code, out


class TestTrainAndDecode:
    def test_fixed_zero_equals_large_only(self, models, capsys):
        code, fixed0 = run_decode(models, capsys, "--mode", "fixed:0")
        assert code == 0
        # compare against a run where the expert IS the large model (pure identity)
        code, again = run_decode(models, capsys, "--mode", "fixed:0")
        assert fixed0 == again

        code = main([
            "decode",
            "--large", f"ngram:{models['large']}",
            "--expert", f"x=ngram:{models['large']},ngram:{models['large']}",
            "--prompt", "jq", "--max-tokens", "6", "--mode", "proxy",
        ])
        large_only = capsys.readouterr().out
        assert code == 0
        assert large_only == fixed0

    def test_missing_expert_is_usage_error(self, models, capsys):
        code = main([
            "decode", "--large", f"ngram:{models['large']}",
            "--prompt", "hi",
        ])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_flag_is_error(self, models, capsys):
        code = main(["decode", "--frobnicate"])
        assert code == 1

    def test_bad_mode_is_usage_error(self, models, capsys):
        code, _ = run_decode(models, capsys, "--mode", "wat")
        assert code == 1

    def test_trace_file_validates(self, models, capsys, tmp_path):
        trace_path = str(tmp_path / "trace.jsonl")
        code, _ = run_decode(models, capsys, "--trace", trace_path)
        assert code == 0
        records = read_traces(trace_path)
        assert len(records) == 6
        assert all(len(r["alphas"]) == 1 for r in records)

    def test_output_is_stable(self, models, capsys):
        outs = {run_decode(models, capsys, "--mode", "adaptive")[1] for _ in range(3)}
        assert len(outs) == 1


class TestServeLoopback:
    def test_http_decode_equals_local_decode(self, models, capsys):
        proc = subprocess.Popen(
            [sys.executable, "-m", "logitfuse.cli", "serve-ngram",
             "--model", models["large"], "--port", "0"],
            stdout=subprocess.PIPE, text=True,
        )
        try:
            line = proc.stdout.readline()
            url = line.strip().split()[-1]
            code, local = run_decode(models, capsys)
            assert code == 0
            code = main([
                "decode", "--large", f"http:{url}",
                "--expert", f"a=ngram:{models['ft']},ngram:{models['base']}",
                "--prompt", "jq", "--max-tokens", "6",
            ])
            remote = capsys.readouterr().out
            assert code == 0
            assert remote == local
        finally:
            proc.terminate()
            proc.wait(timeout=10)


class TestEvalAndSweep:
    def test_eval_writes_report(self, models, capsys, tmp_path):
        doc = {
            "large_model": f"ngram:{models['large']}",
            "experts": [{"name": "a", "fine_tuned": f"ngram:{models['ft']}",
                         "base": f"ngram:{models['base']}"}],
            "prompts": [{"id": "p0", "prompt": "jq", "reference": "vxz jq"}],
            "modes": [{"name": "baseline", "mode": "fixed", "alphas": [0.0]}],
            "metrics": ["perplexity"],
            "defaults": {"max_new_tokens": 4},
        }
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(doc))
        outdir = tmp_path / "out"
        code = main(["eval", "--spec", str(spec_path), "--out", str(outdir)])
        assert code == 0
        assert (outdir / "report.json").exists()
        assert (outdir / "report.csv").exists()
        assert "baseline\tperplexity" in capsys.readouterr().out

    def test_sweep_emits_csv(self, models, capsys):
        code = main([
            "sweep",
            "--large", f"ngram:{models['large']}",
            "--expert", f"a=ngram:{models['ft']},ngram:{models['base']}",
            "--prompt", "jqvx zjq", "--reference", "vxz jqz vv",
            "--alphas", "0:1.5:0.5",
        ])
        out = capsys.readouterr().out
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "mode,prompt_id,metric,value"
        modes = [line.split(",")[0] for line in lines[1:]]
        assert modes == ["fixed:0", "fixed:0.5", "fixed:1", "fixed:1.5", "adaptive"]

    def test_runtime_error_exit_code(self, capsys):
        code = main(["train-ngram", "--input", "/nonexistent", "--out", "/tmp/x.json"])
        assert code == 2
