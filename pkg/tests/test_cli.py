import json

import numpy as np
import pytest

from latentfill.cli import main
from latentfill.masking import load_mask

from conftest import write_corpus
from test_trainer import make_samples, tiny_cfg


@pytest.fixture(scope="module")
def toy_checkpoint(tmp_path_factory):
    """A tiny trained checkpoint shared across CLI tests."""
    from latentfill.training import Trainer

    root = tmp_path_factory.mktemp("ckpt")
    samples = make_samples(n=4, s=32, k=2)
    trainer = Trainer(tiny_cfg(steps=2), samples)
    trainer.run()
    trainer.save(root / "ck")
    return root / "ck"


def test_unknown_command_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2


def test_ingest_summary(tmp_path, capsys):
    manifest = write_corpus(tmp_path, n=3, s=64, with_seg=True, num_labels=2)
    assert main(["ingest", "--manifest", str(manifest), "--resolution", "32"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["records"] == 3
    assert out["splits"] == {"train": 3}


def test_ingest_missing_manifest(tmp_path, capsys):
    assert main(["ingest", "--manifest", str(tmp_path / "nope.jsonl")]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_mask_gen_emits_files_and_index(tmp_path, capsys):
    rc = main(
        [
            "mask-gen",
            "--bucket",
            "high",
            "--n",
            "10",
            "--seed",
            "3",
            "--resolution",
            "64",
            "--out-dir",
            str(tmp_path / "masks"),
        ]
    )
    assert rc == 0
    index = (tmp_path / "masks" / "index.jsonl").read_text().splitlines()
    assert len(index) == 10
    for line in index:
        rec = json.loads(line)
        assert 0.70 <= rec["coverage"] <= 0.90
        mask = load_mask(str(tmp_path / "masks" / rec["file"]))
        assert abs(mask.mean() - rec["coverage"]) < 1e-9


def test_train_and_infer_hard_constraint(tmp_path, toy_checkpoint, capsys):
    import cv2

    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (48, 48, 3)).astype(np.uint8)
    cv2.imwrite(str(tmp_path / "a.png"), cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
    mask = np.zeros((48, 48), np.uint8)
    mask[10:30, 5:40] = 255
    cv2.imwrite(str(tmp_path / "m.png"), mask)
    rc = main(
        [
            "infer",
            "--image",
            str(tmp_path / "a.png"),
            "--mask",
            str(tmp_path / "m.png"),
            "--ckpt",
            str(toy_checkpoint),
            "--out",
            str(tmp_path / "o.png"),
            "--seed",
            "5",
        ]
    )
    assert rc == 0
    out = cv2.cvtColor(cv2.imread(str(tmp_path / "o.png")), cv2.COLOR_BGR2RGB)
    # unmasked pixels equal the resized input exactly
    img_s = cv2.resize(img, (32, 32), interpolation=cv2.INTER_LINEAR)
    mask_s = cv2.resize(mask, (32, 32), interpolation=cv2.INTER_NEAREST) > 127
    assert np.array_equal(out[~mask_s], img_s[~mask_s])
    assert (tmp_path / "o.raw.png").exists()


def test_infer_requires_ckpt_or_server(tmp_path, capsys):
    rc = main(
        [
            "infer",
            "--image",
            "x.png",
            "--mask",
            "y.png",
            "--out",
            "z.png",
        ]
    )
    assert rc == 2


def test_eval_deterministic_reports(tmp_path, toy_checkpoint, capsys):
    manifest = write_corpus(tmp_path, n=3, s=32, with_seg=True, num_labels=2)
    # the toy checkpoint expects the 'test' split by default; use train split
    args = [
        "eval",
        "--manifest",
        str(manifest),
        "--split",
        "train",
        "--ckpt",
        str(toy_checkpoint),
        "--buckets",
        "low,mid",
        "--seed",
        "1",
    ]
    assert main(args + ["--out", str(tmp_path / "r1")]) == 0
    assert main(args + ["--out", str(tmp_path / "r2")]) == 0
    r1 = (tmp_path / "r1" / "report.jsonl").read_text()
    r2 = (tmp_path / "r2" / "report.jsonl").read_text()
    assert r1 == r2
    table = (tmp_path / "r1" / "report.txt").read_text()
    assert "fid" in table and "ssim" in table


def test_report_command(tmp_path, capsys):
    (tmp_path / "rep.jsonl").write_text(
        json.dumps({"bucket": "low", "fid": 1.5, "ssim": 0.8}) + "\n"
    )
    assert main(["report", str(tmp_path / "rep.jsonl")]) == 0
    out = capsys.readouterr().out
    assert "fid" in out and "1.5" in out
