import csv
import subprocess
import sys

import numpy as np
import pytest

from orderflow import cli, tokenizer
from orderflow.baselines import save_hawkes, simulate_hawkes
from orderflow.events import read_stream, write_stream
from orderflow.presets import CLUSTERED_HAWKES, pressure_hawkes


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    p = pressure_hawkes(**CLUSTERED_HAWKES)
    save_hawkes(p, d / "hawkes.txt")
    for k in range(2):
        write_stream(simulate_hawkes(p, n_events=1500, seed=k).to_stream(), d / f"s{k}.csv", "csv")
    return d


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_decode(capsys):
    assert run("decode", 6011, 0, 16383) == 0
    assert capsys.readouterr().out.splitlines() == ["0,1,7,7,11", "0,0,0,0,0", "1,1,15,15,15"]


def test_decode_errors(capsys):
    assert run("decode", 16384) == 3
    assert "TokenOutOfRange" in capsys.readouterr().err
    assert run("decode", "x") == 2
    assert run("decode", 5, "--detokenize") == 2
    with pytest.raises(SystemExit) as exc:
        run("no-such-command")
    assert exc.value.code == 2


def test_calibrate_encode_decode(files, capsys):
    d = files
    assert run("calibrate-tokenizer", "--data", d / "s0.csv", d / "s1.csv", "--out", d / "schema.txt") == 0
    schema = tokenizer.load_schema(d / "schema.txt")
    assert schema.vocab_size == 16384
    assert run("encode", "--data", d / "s1.csv", "--schema", d / "schema.txt", "--out", d / "tok.csv") == 0
    rows = read_csv(d / "tok.csv")
    assert rows[0] == ["liquidity", "scope", "price_level", "trade"] and len(rows) == 1501
    ref = tokenizer.encode_stream(read_stream(d / "s1.csv"), schema)
    np.testing.assert_array_equal(np.array(rows[1:], dtype=int), ref)
    assert run("decode", rows[1][3], "--schema", d / "schema.txt", "--detokenize") == 0
    assert len(capsys.readouterr().out.strip().split(",")) == 5


def test_replay_and_validate(files):
    d = files
    assert run("replay", "--data", d / "s0.csv", "--fills", d / "fills.csv", "--series", d / "series.csv") == 0
    assert len(read_csv(d / "fills.csv")) > 1 and len(read_csv(d / "series.csv")) > 1
    assert run("validate-sim", "--data", d / "s0.csv", "--out", d / "v.csv") == 0
    assert [r[0] for r in read_csv(d / "v.csv")] == ["metric", "fill_volume_cdf", "lot_count_cdf"]
    assert run("eval-stylized", "--series", d / "series.csv", "--max-lag", 5, "--intervals", 1, 10,
               "--out", d / "acf.csv", "--kurtosis-out", d / "k.csv") == 0
    assert len(read_csv(d / "acf.csv")) == 6 and len(read_csv(d / "k.csv")) == 3


def test_generators_and_reports(files):
    d = files
    assert run("fit-zi", "--data", d / "s0.csv", "--out", d / "zi.txt", "--restarts", 2) == 0
    assert run("gen-zi", "--params", d / "zi.txt", "--n", 800, "--out", d / "zi.csv") == 0
    assert run("gen-hawkes", "--params", d / "hawkes.txt", "--n", 800, "--seed", 3, "--out", d / "hk.jsonl",
               "--format", "jsonl") == 0
    assert len(read_stream(d / "zi.csv").events) == 800
    assert len(read_stream(d / "hk.jsonl", "jsonl").events) == 800
    assert run("eval-fidelity", "--real", d / "s0.csv", d / "s1.csv", "--generated", d / "zi.csv",
               "--out", d / "fid.csv") == 0
    assert len(read_csv(d / "fid.csv")) == 1 + 6 + 4
    assert run("eval-drift", "--period-a", d / "s0.csv", "--period-b", d / "s1.csv", "--out", d / "drift.csv") == 0
    assert read_csv(d / "drift.csv")[1][3:] == ["a", "b"]
    assert run("rollout", "--generator", "zi", "--params", d / "zi.txt", "--schema", d / "schema.txt",
               "--context", d / "s0.csv", "--n", 2, "--horizon", 50, "--out-dir", d / "roll") == 0
    assert (d / "roll" / "rollout_001" / "series.csv").exists()
    assert len(read_csv(d / "roll" / "trajectories.csv")) > 1


def test_fit_hawkes(files):
    d = files
    assert run("fit-hawkes", "--data", d / "s0.csv", "--out", d / "fit.txt") == 3
    assert run("gen-hawkes", "--params", d / "hawkes.txt", "--n", 5000, "--out", d / "big.csv") == 0
    assert run("fit-hawkes", "--data", d / "big.csv", "--diagonal", "--max-iter", 200, "--out", d / "fit.txt") == 0
    assert (d / "fit.txt").read_text()


def test_train_rollout_inject(files):
    d = files
    cfg = d / "toy.cfg"
    cfg.write_text("model.n_layers = 1\nmodel.hidden_dim = 16  # small\nmodel.context_length = 16\n"
                   "train.batch_size = 4\ntrain.eval_every = 5\n")
    assert run("train", "--corpus", d / "s0.csv", d / "s1.csv", "--schema", d / "schema.txt", "--config", cfg,
               "--steps", 10, "--out", d / "toy.ckpt", "--loss-curve", d / "loss.csv") == 0
    assert len(read_csv(d / "loss.csv")) > 2
    common = ("--checkpoint", d / "toy.ckpt", "--schema", d / "schema.txt", "--context", d / "s1.csv",
              "--context-events", 15, "--horizon", 20, "--n", 2)
    assert run("rollout", *common, "--out-dir", d / "m1") == 0
    assert run("rollout", *common, "--out-dir", d / "m2") == 0
    for name in ("tokens.csv", "series.csv"):
        assert (d / "m1" / "rollout_000" / name).read_text() == (d / "m2" / "rollout_000" / name).read_text()
    assert run("inject", *common, "--side", "sell", "--out-dir", d / "inj") == 0
    tok = read_csv(d / "inj" / "rollout_000" / "tokens.csv")
    assert tok[0][-1] == "injected" and any(r[-1] == "1" for r in tok[1:])
    assert run("controllability", "--checkpoint", d / "toy.ckpt", "--schema", d / "schema.txt", "--n", 1,
               "--horizon", 10, "--out", d / "ctl.csv") == 0
    assert len(read_csv(d / "ctl.csv")) == 7
    assert run("rollout", *common[:-2], "--n", 1, "--horizon", -1, "--out-dir", d / "bad") == 3


def test_config_errors(files, capsys):
    d = files
    cfg = d / "bad.cfg"
    cfg.write_text("model.nope = 3\n")
    assert run("train", "--corpus", d / "s0.csv", "--schema", d / "schema.txt", "--config", cfg,
               "--out", d / "x.ckpt") == 2
    assert "unknown key" in capsys.readouterr().err
    assert run("replay", "--data", d / "missing.csv") == 3


def test_bad_data_exit_code(tmp_path, capsys):
    f = tmp_path / "bad.csv"
    f.write_text("garbage\n")
    assert run("replay", "--data", f) == 3
    assert capsys.readouterr().err.startswith("error: ")


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "orderflow.cli", "decode", "6011"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "0,1,7,7,11"


def test_replay_empty_file(tmp_path, capsys):
    f = tmp_path / "empty.csv"
    f.write_text("")
    assert run("replay", "--data", f) == 3
    assert capsys.readouterr().err.startswith("error: EmptyStream")
