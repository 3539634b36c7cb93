import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def make_test_image(seed: int, s: int = 64) -> np.ndarray:
    """Smooth random RGB image (3,s,s) in [-1,1], uint8-quantized so it
    round-trips through PNG files exactly."""
    rng = np.random.default_rng(seed)
    import cv2

    coarse = rng.uniform(0, 255, size=(8, 8, 3)).astype(np.float32)
    img = cv2.resize(coarse, (s, s), interpolation=cv2.INTER_CUBIC)
    u8 = np.clip(img, 0, 255).round().astype(np.uint8)
    return np.transpose(u8, (2, 0, 1)).astype(np.float32) / 127.5 - 1.0


def write_corpus(tmp_path, n=4, s=64, with_seg=True, num_labels=3, seed=0):
    """Write n PNG images (+ optional seg maps) and a manifest; returns its path."""
    import cv2
    import json

    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n):
        img = make_test_image(seed * 1000 + i, s)
        u8 = np.clip((np.transpose(img, (1, 2, 0)) + 1) * 127.5, 0, 255).round()
        ipath = tmp_path / f"img_{i}.png"
        cv2.imwrite(str(ipath), cv2.cvtColor(u8.astype(np.uint8), cv2.COLOR_RGB2BGR))
        rec = {"id": f"im{i}", "image_path": str(ipath), "split": "train"}
        if with_seg:
            seg = rng.integers(0, num_labels, size=(s, s)).astype(np.uint8)
            spath = tmp_path / f"seg_{i}.png"
            cv2.imwrite(str(spath), seg)
            rec["seg_path"] = str(spath)
        lines.append(json.dumps(rec))
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
