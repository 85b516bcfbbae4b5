import json
import math

import numpy as np
import pytest

from brctc.cli import main
from brctc.toy import ToyModel


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return str(path)


def read_jsonl(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, read_jsonl(capsys.readouterr().out)


def random_record(rng, idx, infeasible=False):
    if infeasible:
        return {"id": f"u{idx}", "logits": rng.normal(size=(2, 3)).tolist(), "labels": [1, 1]}
    T = int(rng.integers(3, 8))
    return {"id": f"u{idx}", "logits": rng.normal(size=(T, 3)).tolist(), "labels": [1, 2]}


class TestLoss:
    def test_single_frame(self, tmp_path, capsys):
        src = write_jsonl(tmp_path / "in.jsonl", [{"id": "a", "logprobs": [[math.log(0.4), math.log(0.6)]], "labels": [1]}])
        code, rows = run(capsys, "loss", "-i", src)
        assert code == 0
        assert rows[0]["id"] == "a"
        assert rows[0]["loss"] == pytest.approx(-math.log(0.6), abs=1e-12)

    def test_zero_lambda_matches_vanilla_bytes(self, tmp_path, capsys):
        rng = np.random.default_rng(70)
        src = write_jsonl(tmp_path / "in.jsonl", [random_record(rng, i) for i in range(10)])
        main(["loss", "-i", src, "--grad"])
        vanilla = capsys.readouterr().out
        for risk in ("downsample", "early-emission"):
            main(["loss", "-i", src, "--grad", "--risk", risk, "--lambda", "0"])
            assert capsys.readouterr().out == vanilla

    def test_partial_failure(self, tmp_path, capsys):
        rng = np.random.default_rng(71)
        records = [random_record(rng, i, infeasible=(i == 37)) for i in range(100)]
        src = write_jsonl(tmp_path / "in.jsonl", records)
        code, rows = run(capsys, "loss", "-i", src, "--risk", "downsample", "--lambda", "10")
        assert code == 2
        assert [r["id"] for r in rows] == [r["id"] for r in records]
        errors = [r for r in rows if "error" in r]
        assert len(errors) == 1 and errors[0]["id"] == "u37"
        assert errors[0]["error"] == "InfeasibleAlignment"

    def test_malformed_lines(self, tmp_path, capsys):
        src = tmp_path / "in.jsonl"
        src.write_text(
            "not json\n"
            + json.dumps({"id": "both", "logits": [[0, 0]], "logprobs": [[0, -1]], "labels": [1]})
            + "\n"
            + json.dumps({"id": "ragged", "logits": [[0, 0], [0]], "labels": [1]})
            + "\n"
            + json.dumps({"id": "unnormalized", "logprobs": [[-0.1, -0.1]], "labels": [1]})
            + "\n"
            + json.dumps({"id": "ok", "logits": [[0, 0]], "labels": [1]})
            + "\n"
        )
        code, rows = run(capsys, "loss", "-i", src)
        assert code == 2
        assert [r.get("error") for r in rows] == ["ParseError"] * 4 + [None]
        assert rows[0]["id"] == "1"

    def test_inline_gradient(self, tmp_path, capsys):
        rng = np.random.default_rng(72)
        src = write_jsonl(tmp_path / "in.jsonl", [random_record(rng, 0)])
        _, rows = run(capsys, "loss", "-i", src, "--grad", "--risk", "early-emission", "--lambda", "20")
        grad = np.array(rows[0]["grad"])
        assert grad.shape[1] == 3
        assert np.abs(grad.sum(axis=1)).max() < 1e-9

    def test_workers_keep_order(self, tmp_path, capsys):
        rng = np.random.default_rng(73)
        src = write_jsonl(tmp_path / "in.jsonl", [random_record(rng, i) for i in range(30)])
        main(["loss", "-i", src])
        serial = capsys.readouterr().out
        main(["loss", "-i", src, "--workers", "3"])
        assert capsys.readouterr().out == serial

    def test_output_file(self, tmp_path, capsys):
        src = write_jsonl(tmp_path / "in.jsonl", [{"id": "a", "logits": [[0, 0]], "labels": [1]}])
        out = tmp_path / "out.jsonl"
        assert main(["loss", "-i", src, "-o", str(out)]) == 0
        assert read_jsonl(out.read_text())[0]["loss"] == pytest.approx(math.log(2))

    def test_env_override(self, tmp_path, capsys, monkeypatch):
        rng = np.random.default_rng(74)
        src = write_jsonl(tmp_path / "in.jsonl", [random_record(rng, 0)])
        _, explicit = run(capsys, "loss", "-i", src, "--risk", "downsample", "--lambda", "10")
        monkeypatch.setenv("BRCTC_RISK", "downsample")
        monkeypatch.setenv("BRCTC_LAMBDA", "10")
        _, from_env = run(capsys, "loss", "-i", src)
        assert from_env == explicit
        # flags still win
        _, flag = run(capsys, "loss", "-i", src, "--lambda", "0")
        assert flag[0]["loss"] < explicit[0]["loss"]

    def test_missing_input_is_fatal(self, tmp_path, capsys):
        assert main(["loss", "-i", str(tmp_path / "nope.jsonl")]) == 1

    def test_negative_lambda_is_fatal(self, tmp_path, capsys):
        src = write_jsonl(tmp_path / "in.jsonl", [])
        assert main(["loss", "-i", src, "--risk", "downsample", "--lambda", "-1"]) == 1


class TestChecks:
    def test_grad_check(self, capsys):
        code, rows = run(capsys, "grad-check", "--risk", "early-emission", "--lambda", "20", "--instances", "5")
        assert code == 0
        assert rows[0]["checked"] == 5 and rows[0]["max_rel_error"] < 1e-4

    def test_grad_check_step_sweep(self, capsys):
        code, rows = run(capsys, "grad-check", "--instances", "3", "--step", "1e-4", "1e-5", "1e-6")
        assert code == 0
        assert [r["step"] for r in rows] == [1e-4, 1e-5, 1e-6]

    def test_oracle_compare(self, capsys):
        code, rows = run(capsys, "oracle-compare", "--instances", "50")
        assert code == 0
        assert len(rows) == 50 and all(r["pass"] for r in rows)

    def test_builtin_fixtures(self, capsys):
        code, rows = run(capsys, "oracle-compare", "--fixture", "grouping_example", "infeasible_example")
        assert code == 0
        assert rows[0]["objective"] == 0.62
        assert rows[1]["feasible"] is False and rows[1]["oracle"] == 0.0 and rows[1]["pass"]

    def test_fixture_file(self, tmp_path, capsys):
        fx = tmp_path / "fx.json"
        fx.write_text(json.dumps({"kind": "objective", "posteriors": [0.5], "risks": [0.5], "expected": 0.3}))
        code, rows = run(capsys, "oracle-compare", "--fixture", fx)
        assert code == 2 and rows[0]["objective"] == 0.25


class TestTrimAndLatency:
    def test_trim(self, tmp_path, capsys):
        blank = [0.5] * 10 + [0.995] * 10
        logprobs = [[math.log(b), math.log(1 - b)] for b in blank]
        hidden = np.arange(40.0).reshape(20, 2).tolist()
        src = write_jsonl(tmp_path / "in.jsonl", [{"id": "t", "logprobs": logprobs, "hidden": hidden, "labels": [1]}])
        code, rows = run(capsys, "trim", "-i", src)
        assert code == 0
        assert (rows[0]["m"], rows[0]["kept"], rows[0]["dsf"]) == (10, 15, 0.75)
        assert rows[0]["hidden"] == hidden[:15]
        _, rows = run(capsys, "trim", "-i", src, "--margin", "2")
        assert rows[0]["kept"] == 12

    def test_trim_hidden_mismatch(self, tmp_path, capsys):
        src = write_jsonl(tmp_path / "in.jsonl", [{"id": "t", "logits": [[0, 0]] * 3, "hidden": [[1.0]] * 2}])
        code, rows = run(capsys, "trim", "-i", src)
        assert code == 2 and rows[0]["error"] == "LengthMismatch"

    def test_latency(self, tmp_path, capsys):
        records = [
            {"id": "a", "path": [0, 0, 1, 0, 0, 0, 2], "labels": [1, 2], "ref_events": [1, 3]},
            {"id": "b", "path": [1, 0, 0], "labels": [1], "ref_events": [3]},
            {"id": "c", "path": [0, 0], "labels": [1], "ref_events": [1]},
        ]
        src = write_jsonl(tmp_path / "in.jsonl", records)
        code, rows = run(capsys, "latency", "-i", src, "--frame-ms", "40", "--chunk-ms", "160", "--rtf", "0.176")
        assert code == 0
        assert rows[0]["dl"] == 120.0 and rows[0]["dcl"] == 80.0
        assert rows[1]["dl"] == -80.0
        assert rows[2]["dl"] is None and rows[2]["matched_tokens"] == 0
        summary = rows[-1]["summary"]
        assert summary["mean_dl"] == 20.0
        assert summary["cl"] == pytest.approx(28.16)

    def test_latency_from_grid(self, tmp_path, capsys):
        probs = np.full((4, 3), 0.05)
        probs[[0, 1, 2, 3], [0, 1, 0, 2]] = 0.9
        rec = {"id": "g", "logprobs": np.log(probs).tolist(), "labels": [1, 2], "ref_events": [1, 3]}
        src = write_jsonl(tmp_path / "in.jsonl", [rec])
        for mode in ("greedy", "forced"):
            _, rows = run(capsys, "latency", "-i", src, "--frame-ms", "10", "--alignment", mode)
            assert rows[0]["emission_end_frames"] == [2, 4]
            assert rows[0]["dl"] == 10.0

    def test_latency_bad_reference(self, tmp_path, capsys):
        src = write_jsonl(tmp_path / "in.jsonl", [{"id": "x", "path": [1], "labels": [1, 2], "ref_events": [1]}])
        code, rows = run(capsys, "latency", "-i", src)
        assert code == 2 and rows[0]["error"] == "ParseError"


class TestTrainToy:
    CONFIG = "num_train = 6\nnum_eval = 3\nepochs = 5\nrisk = early-emission\nlambda = 5\nwindow = 2\nhidden = 8\n"

    def test_outputs(self, tmp_path, capsys):
        cfg = tmp_path / "toy.cfg"
        cfg.write_text(self.CONFIG)
        out = tmp_path / "run"
        code, rows = run(capsys, "train-toy", "--config", cfg, "--out", out, "--seed", "3")
        assert code == 0 and rows[0]["risk"] == "early_emission"
        trace = (out / "loss_trace.csv").read_text().splitlines()
        assert trace[0] == "epoch,loss" and len(trace) == 6
        stats = read_jsonl((out / "spikes.jsonl").read_text())
        assert len(stats) == 4 and "summary" in stats[-1]
        model = ToyModel.load(out / "model.npz")
        assert model.window == 2 and model.W1.shape == (5 * 8, 8)
        heatmaps = sorted((out / "heatmaps").iterdir())
        assert len(heatmaps) == 3
        data = heatmaps[0].read_bytes()
        header = data.split(b"\n", 3)
        assert header[0] == b"P5"
        w, h = map(int, header[1].split())
        assert h == 5 and len(header[3]) == w * h

    def test_rerun_is_identical(self, tmp_path, capsys):
        cfg = tmp_path / "toy.cfg"
        cfg.write_text(self.CONFIG)
        for name in ("a", "b"):
            main(["train-toy", "--config", str(cfg), "--out", str(tmp_path / name), "--heatmaps", "1"])
        capsys.readouterr()
        for rel in ("loss_trace.csv", "spikes.jsonl", "heatmaps/eval_0000.pgm"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "toy.cfg"
        cfg.write_text("colour = blue\n")
        assert main(["train-toy", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
