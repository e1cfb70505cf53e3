from pathlib import Path

import numpy as np
import pytest

from unitface.cli import main
from unitface.config import RunConfig, RunConfigError, resolve_seed
from unitface.evaluation import RatingSheet
from unitface.formats import read_clip, read_units, write_ratings
from unitface.pipeline.checkpoint import load_checkpoint

TINY = """\
vocab_text=24
vocab_units=12
d_enc=4
d_model=16
d_gen=16
d_face=16
heads=2
face_encoder_layers=1
batch_size=2
gradient_accumulation=1
max_steps=3
"""
SIZES = ["asr=4", "tts=4", "face=3", "s2s=3", "t2t=3"]


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """gen-data then stages I-IV on a tiny configuration."""
    root = tmp_path_factory.mktemp("run")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    assert main(["gen-data", "--out-dir", str(root / "data"), "--seed", "3", "--config", str(cfg),
                 "--min-len", "2", "--max-len", "4", "--sizes", *SIZES]) == 0
    prev = None
    for stage in ("I", "II", "III", "IV"):
        args = ["train", "--stage", stage, "--data-dir", str(root / "data"), "--out-dir", str(root / stage),
                "--config", str(cfg), "--seed", "3"]
        if prev:
            args += ["--init", str(root / prev / "checkpoint.exck")]
        assert main(args) == 0
        prev = stage
    return root


def test_gen_data_is_byte_identical(run, tmp_path):
    assert main(["gen-data", "--out-dir", str(tmp_path / "d"), "--seed", "3", "--config", str(run / "tiny.cfg"),
                 "--min-len", "2", "--max-len", "4", "--sizes", *SIZES]) == 0
    assert tree(tmp_path / "d") == tree(run / "data")
    assert len(list((tmp_path / "d" / "face").glob("*.txt"))) == 3


def test_gen_data_default_sizes(tmp_path):
    assert main(["gen-data", "--out-dir", str(tmp_path), "--min-len", "1", "--max-len", "1"]) == 0
    counts = {k: len(list((tmp_path / k).glob("*.txt"))) for k in ("asr", "tts", "face", "s2s", "t2t")}
    assert counts == {"asr": 256, "tts": 256, "face": 128, "s2s": 128, "t2t": 64}


def test_gen_data_rejects_zero_size(tmp_path, capsys):
    assert main(["gen-data", "--out-dir", str(tmp_path), "--sizes", "asr=0"]) == 2
    assert "asr" in capsys.readouterr().err


def test_train_outputs(run):
    out = run / "IV"
    ck = load_checkpoint(out / "checkpoint.exck")
    assert ck.stage == "IV" and ck.complete and ck.step == 3
    lines = (out / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 4
    cfg = (out / "run_config.txt").read_text()
    assert "stage=IV" in cfg and "lr_llm=2e-06" in cfg and "seed=3" in cfg


def test_stage_needs_previous_checkpoint(run, capsys):
    args = ["train", "--stage", "III", "--data-dir", str(run / "data"), "--out-dir", str(run / "x"),
            "--config", str(run / "tiny.cfg")]
    assert main(args) == 2
    assert "stage II" in capsys.readouterr().err
    assert main(args + ["--init", str(run / "I" / "checkpoint.exck")]) == 2
    assert main(args + ["--from-scratch"]) == 0


def test_resume_reproduces_uninterrupted_run(run, tmp_path):
    base = ["train", "--stage", "II", "--data-dir", str(run / "data"), "--config", str(run / "tiny.cfg"),
            "--seed", "3", "--init", str(run / "I" / "checkpoint.exck")]
    assert main(base + ["--out-dir", str(tmp_path / "half"), "--stop-after", "1"]) == 0
    assert not load_checkpoint(tmp_path / "half" / "checkpoint.exck").complete
    assert main(base + ["--out-dir", str(tmp_path / "rest"),
                        "--resume", str(tmp_path / "half" / "checkpoint.exck")]) == 0
    a = (tmp_path / "rest" / "checkpoint.exck").read_bytes()
    assert a == (run / "II" / "checkpoint.exck").read_bytes()
    assert (tmp_path / "rest" / "loss.csv").read_bytes() == (run / "II" / "loss.csv").read_bytes()


def test_generate_prompt_is_deterministic(run, tmp_path):
    ck = str(run / "IV" / "checkpoint.exck")
    for d in ("a", "b"):
        assert main(["generate", "--checkpoint", ck, "--prompt-tokens", "3 9 10", "--out", str(tmp_path / d),
                     "--max-tokens", "4", "--max-units", "6"]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    [(_, units)] = read_units(tmp_path / "a" / "units.txt")
    if units:
        clip = read_clip(tmp_path / "a" / "clip.csv")
        assert clip.frames == 2 * len(units)
        assert np.all((clip.coeffs > 0) & (clip.coeffs < 1))


def test_generate_from_units_file(run, tmp_path):
    (tmp_path / "u.txt").write_text("s1 1 2 3 4 5\ns2 7\n")
    ck = str(run / "IV" / "checkpoint.exck")
    assert main(["generate", "--checkpoint", ck, "--units-file", str(tmp_path / "u.txt"),
                 "--out", str(tmp_path / "o")]) == 0
    assert read_clip(tmp_path / "o" / "clip_s1.csv").frames == 10
    assert read_clip(tmp_path / "o" / "clip_s2.csv").frames == 2


def test_generate_format_errors(run, tmp_path, capsys):
    ck = str(run / "IV" / "checkpoint.exck")
    (tmp_path / "bad.txt").write_text("s1 1 2\ns2 1 x\n")
    assert main(["generate", "--checkpoint", ck, "--units-file", str(tmp_path / "bad.txt"),
                 "--out", str(tmp_path / "o")]) == 3
    assert "bad.txt:2:" in capsys.readouterr().err
    (tmp_path / "big.txt").write_text("s1 12\n")
    assert main(["generate", "--checkpoint", ck, "--units-file", str(tmp_path / "big.txt"),
                 "--out", str(tmp_path / "o")]) == 3
    (tmp_path / "junk.exck").write_bytes(b"garbage")
    assert main(["generate", "--checkpoint", str(tmp_path / "junk.exck"), "--prompt-tokens", "3",
                 "--out", str(tmp_path / "o")]) == 3


def test_eval_commands(run, tmp_path, capsys):
    clips = tmp_path / "clips"
    (tmp_path / "u.txt").write_text("a 1 2 3\nb 4 5\n")
    assert main(["generate", "--checkpoint", str(run / "IV" / "checkpoint.exck"),
                 "--units-file", str(tmp_path / "u.txt"), "--out", str(clips)]) == 0
    capsys.readouterr()
    assert main(["eval", "--metric", "lve", "--pred", str(clips), "--ref", str(clips),
                 "--out", str(tmp_path / "rep" / "lve.csv")]) == 0
    assert (tmp_path / "rep" / "lve.csv").read_text().splitlines()[:2] == ["metric,value", "lve,0.0"]
    assert (tmp_path / "rep" / "run_config.txt").exists()

    sheet = RatingSheet.from_counts([(8, 0, 0)] * 11 + [(0, 0, 8)] * 2 + [(0, 8, 0)] * 7)
    write_ratings(tmp_path / "s.csv", sheet)
    capsys.readouterr()
    assert main(["eval", "--metric", "ab", "--sheet", str(tmp_path / "s.csv")]) == 0
    out = capsys.readouterr().out
    assert "win,55.0" in out and "tie,10.0" in out and "overall,60.0" in out

    (tmp_path / "ref.txt").write_text("the cat sat\na b\n")
    assert main(["eval", "--metric", "wer", "--ref", str(tmp_path / "ref.txt"),
                 "--hyp", str(tmp_path / "ref.txt")]) == 0
    assert "wer,0.0" in capsys.readouterr().out

    (tmp_path / "lat.csv").write_text("t_e2e,t_speech,t_first_unit,t_face_extra\n4.316,2.0,0.029,0.012\n0,0,0,0\n")
    assert main(["eval", "--metric", "latency", "--records", str(tmp_path / "lat.csv")]) == 0
    res = capsys.readouterr()
    assert "rtf,2.158" in res.out and "excluded,1.0" in res.out and "zero speech" in res.err


def test_eval_errors(tmp_path):
    assert main(["eval", "--metric", "ab"]) == 2
    (tmp_path / "s.csv").write_text("pair,rater,label\n")
    assert main(["eval", "--metric", "ab", "--sheet", str(tmp_path / "s.csv")]) == 3
    (tmp_path / "r.txt").write_text("a b\n")
    (tmp_path / "h.txt").write_text("a b\nc\n")
    assert main(["eval", "--metric", "wer", "--ref", str(tmp_path / "r.txt"), "--hyp", str(tmp_path / "h.txt")]) == 3
    assert main(["eval", "--metric", "ab", "--sheet", str(tmp_path / "missing.csv")]) == 1


def test_io_and_config_errors(tmp_path):
    (tmp_path / "file").write_text("x")
    assert main(["gen-data", "--out-dir", str(tmp_path / "file" / "sub"), "--sizes", *SIZES]) == 1
    (tmp_path / "bad.cfg").write_text("colour=blue\n")
    assert main(["gen-data", "--out-dir", str(tmp_path / "d"), "--config", str(tmp_path / "bad.cfg")]) == 2
    assert main(["gen-data", "--out-dir", str(tmp_path / "d"), "--config", str(tmp_path / "none.cfg")]) == 2


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert capsys.readouterr().out.startswith("unitface ")


def test_verify_invariants_pass():
    assert main(["verify", "--suite", "invariants"]) == 0


def test_verify_detects_injected_fault(capsys):
    assert main(["verify", "--suite", "gradients", "--seeds", "0", "--inject-fault", "softmax"]) == 4
    assert "FAIL" in capsys.readouterr().out


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------

def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("EXOMNI_SEED", raising=False)
    assert resolve_seed(None) == 0
    assert resolve_seed(None, "5") == 5
    monkeypatch.setenv("EXOMNI_SEED", "9")
    assert resolve_seed(None, "5") == 9
    assert resolve_seed(2, "5") == 2
    monkeypatch.setenv("EXOMNI_SEED", "x")
    with pytest.raises(RunConfigError):
        resolve_seed(None)


def test_env_seed_reaches_gen_data(monkeypatch, tmp_path):
    monkeypatch.setenv("EXOMNI_SEED", "11")
    assert main(["gen-data", "--out-dir", str(tmp_path), "--sizes", "asr=1", "--min-len", "1", "--max-len", "1"]) == 0
    assert "seed=11" in (tmp_path / "corpus.txt").read_text()


def test_run_config_split():
    cfg = RunConfig({"d_model": "16", "heads": "2", "epoch": "1", "seed": "4"})
    assert cfg.model_values() == {"d_model": "16", "heads": "2"}
    assert cfg.schedule_overrides() == {"epoch": "1"}
    assert cfg.model_config(4).d_model == 16 and cfg.model_config(4).init_seed == 4
    with pytest.raises(RunConfigError):
        RunConfig({"nope": "1"})
    with pytest.raises(RunConfigError):
        RunConfig({"d_model": "15"}).model_config(0)
