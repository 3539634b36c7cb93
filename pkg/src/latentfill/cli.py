"""Command-line entry points.

Commands: ingest, mask-gen, pretrain-gan, train-encoder, eval, infer,
report. Every command is deterministic given --seed; failures exit
nonzero with one machine-parsable line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import cv2
import numpy as np


def _load_train_config(args, **extra):
    from latentfill.config import default_config, load_config

    overrides = {
        key: getattr(args, key, None)
        for key in ("seed", "steps", "batch", "resolution", "num_labels")
        if getattr(args, key, None) is not None
    }
    overrides.update({k: v for k, v in extra.items() if v is not None})
    if getattr(args, "config", None):
        return load_config(args.config, overrides)
    return default_config(**overrides)


def _samples_from_manifest(manifest, split, cfg):
    from latentfill.data import load_manifest, prepare_sample

    records = [r for r in load_manifest(manifest) if split is None or r.split == split]
    return [
        prepare_sample(
            r,
            cfg.model.resolution,
            canny_thresholds=(cfg.model.canny_low, cfg.model.canny_high),
        )
        for r in records
    ]


def cmd_ingest(args) -> int:
    from latentfill.data import load_manifest, prepare_sample

    records = load_manifest(args.manifest)
    splits = {}
    labels = set()
    for rec in records:
        sample = prepare_sample(rec, args.resolution)
        splits[rec.split] = splits.get(rec.split, 0) + 1
        labels.update(np.unique(sample.seg).tolist())
    summary = {
        "records": len(records),
        "splits": splits,
        "labels_seen": sorted(int(l) for l in labels),
        "resolution": args.resolution,
    }
    print(json.dumps(summary))
    return 0


def cmd_mask_gen(args) -> int:
    from latentfill.masking import MaskSpec, coverage, generate_mask, save_mask

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_path = out_dir / "index.jsonl"
    with open(index_path, "w", encoding="utf-8") as index:
        for i in range(args.n):
            spec = MaskSpec(args.kind, args.bucket, args.seed + i)
            mask = generate_mask(spec, args.resolution, args.resolution)
            fname = f"mask_{args.bucket}_{args.seed + i:06d}.png"
            save_mask(str(out_dir / fname), mask)
            index.write(
                json.dumps(
                    {
                        "file": fname,
                        "kind": args.kind,
                        "bucket": args.bucket,
                        "seed": args.seed + i,
                        "coverage": coverage(mask),
                    }
                )
                + "\n"
            )
    print(f"wrote {args.n} masks to {out_dir}")
    return 0


def cmd_pretrain_gan(args) -> int:
    from latentfill.training import Trainer

    cfg = _load_train_config(args, phase="pretrain-gan")
    samples = _samples_from_manifest(args.manifest, args.split, cfg)
    trainer = Trainer(cfg, samples, workdir=args.workdir)
    trainer.run()
    trainer.save(args.out)
    print(f"saved generator checkpoint to {args.out} after {trainer.step} steps")
    return 0


def cmd_train_encoder(args) -> int:
    from latentfill.training import Trainer, load_generator_weights

    cfg = _load_train_config(args, phase="train-encoder")
    samples = _samples_from_manifest(args.manifest, args.split, cfg)
    trainer = Trainer(cfg, samples, workdir=args.workdir)
    if args.generator_ckpt:
        load_generator_weights(trainer.model, args.generator_ckpt)
    if args.resume:
        trainer.load(args.resume)
    trainer.run(max(0, cfg.steps - trainer.step))
    trainer.save(args.out)
    print(f"saved checkpoint to {args.out} after {trainer.step} steps")
    return 0


def _eval_fn(model):
    from latentfill import masking

    def fn(sample, mask):
        raw, out = model.infer(
            sample.image, mask, sample.edge.astype(np.float32)[None], sample.seg
        )
        composited = masking.composite(raw, sample.image, mask)
        pred_seg = out["preds"]["seg"][2].argmax(dim=1)[0].numpy()
        return composited, pred_seg

    return fn


def cmd_eval(args) -> int:
    from latentfill.extractor import FrozenPyramidExtractor
    from latentfill.metrics import evaluate_corpus
    from latentfill.training import load_model_for_inference
    from latentfill.config import load_config

    cfg = load_config(Path(args.ckpt) / "config.ini")
    model, _ = load_model_for_inference(args.ckpt, cfg)
    samples = _samples_from_manifest(args.manifest, args.split, cfg)
    if not samples:
        print("error: no samples matched the manifest/split", file=sys.stderr)
        return 1
    report = evaluate_corpus(
        _eval_fn(model),
        samples,
        FrozenPyramidExtractor(),
        buckets=tuple(args.buckets.split(",")),
        seed=args.seed if args.seed is not None else 0,
        num_labels=cfg.model.num_labels,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.jsonl").write_text(report.to_jsonl())
    (out_dir / "report.txt").write_text(report.to_text_table())
    print(report.to_text_table(), end="")
    return 0


def _read_image_rgb(path):
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise ValueError(f"undecodable image: {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def cmd_infer(args) -> int:
    import base64

    if args.server:
        import httpx

        def b64(path):
            return base64.b64encode(Path(path).read_bytes()).decode("ascii")

        payload = {"image": b64(args.image), "mask": b64(args.mask)}
        if args.edge_hint:
            payload["edge_hint"] = b64(args.edge_hint)
        if args.seg_hint:
            payload["seg_hint"] = b64(args.seg_hint)
        if args.seed is not None:
            payload["seed"] = args.seed
        resp = httpx.post(args.server.rstrip("/") + "/v1/inpaint", json=payload, timeout=300)
        if resp.status_code != 200:
            print(f"error: server returned {resp.status_code}: {resp.text}", file=sys.stderr)
            return 1
        body = resp.json()
        Path(args.out).write_bytes(base64.b64decode(body["result"]))
        raw_path = args.raw_out or str(Path(args.out).with_suffix(".raw.png"))
        Path(raw_path).write_bytes(base64.b64decode(body["raw"]))
        print(f"wrote {args.out} and {raw_path}")
        return 0

    from latentfill.masking import load_mask
    from latentfill.training import load_model_for_inference

    if not args.ckpt:
        print("error: provide --ckpt or --server", file=sys.stderr)
        return 2
    model, _ = load_model_for_inference(args.ckpt)
    s = model.cfg.resolution
    rgb = _read_image_rgb(args.image)
    rgb_s = cv2.resize(rgb, (s, s), interpolation=cv2.INTER_LINEAR)
    mask = load_mask(args.mask)[0]
    mask_s = cv2.resize(mask, (s, s), interpolation=cv2.INTER_NEAREST)
    mask_f = (mask_s > 0.5).astype(np.float32)[None]
    edge = None
    if args.edge_hint:
        e = cv2.imread(args.edge_hint, cv2.IMREAD_GRAYSCALE)
        if e is None:
            raise ValueError(f"unreadable edge hint: {args.edge_hint}")
        e = cv2.resize(e, (s, s), interpolation=cv2.INTER_NEAREST)
        edge = (e > 127).astype(np.float32)[None]
    seg = None
    if args.seg_hint:
        g = cv2.imread(args.seg_hint, cv2.IMREAD_UNCHANGED)
        if g is None:
            raise ValueError(f"unreadable seg hint: {args.seg_hint}")
        if g.ndim == 3:
            g = g[:, :, 0]
        seg = cv2.resize(g, (s, s), interpolation=cv2.INTER_NEAREST).astype(np.int64)
        if seg.max() >= model.cfg.num_labels:
            raise ValueError(f"seg hint label {int(seg.max())} >= K={model.cfg.num_labels}")

    norm = np.transpose(rgb_s, (2, 0, 1)).astype(np.float32) / 127.5 - 1.0
    raw, _ = model.infer(norm, mask_f, edge, seg, seed=args.seed or 0)
    raw_u8 = np.clip((np.transpose(raw, (1, 2, 0)) + 1) * 127.5, 0, 255).round().astype(np.uint8)
    composited = np.where((mask_s > 0.5)[:, :, None], raw_u8, rgb_s)
    cv2.imwrite(str(args.out), cv2.cvtColor(composited, cv2.COLOR_RGB2BGR))
    raw_path = args.raw_out or str(Path(args.out).with_suffix(".raw.png"))
    cv2.imwrite(str(raw_path), cv2.cvtColor(raw_u8, cv2.COLOR_RGB2BGR))
    print(f"wrote {args.out} and {raw_path}")
    return 0


def cmd_report(args) -> int:
    from latentfill.metrics import BucketReport

    for path in args.reports:
        text = Path(path).read_text()
        report = BucketReport.from_jsonl(text)
        print(f"# {path}")
        print(report.to_text_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latentfill")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="validate a manifest and derive corpus stats")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--resolution", type=int, default=64)
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("mask-gen", help="emit mask PNGs plus a coverage index")
    sp.add_argument("--bucket", required=True, choices=("low", "mid", "high"))
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--kind", default="brush", choices=("brush", "rect", "outpaint"))
    sp.add_argument("--resolution", type=int, default=256)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=cmd_mask_gen)

    for name, fn in (("pretrain-gan", cmd_pretrain_gan), ("train-encoder", cmd_train_encoder)):
        sp = sub.add_parser(name, help=f"run the {name} phase")
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--split", default="train")
        sp.add_argument("--config")
        sp.add_argument("--out", required=True)
        sp.add_argument("--workdir")
        sp.add_argument("--steps", type=int)
        sp.add_argument("--batch", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--resolution", type=int)
        sp.add_argument("--num-labels", dest="num_labels", type=int)
        if name == "train-encoder":
            sp.add_argument("--generator-ckpt")
            sp.add_argument("--resume")
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("eval", help="bucketed evaluation of a checkpoint")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--buckets", default="low,mid,high")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("infer", help="inpaint one image")
    sp.add_argument("--image", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--edge-hint")
    sp.add_argument("--seg-hint")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--ckpt")
    sp.add_argument("--server", help="POST to a running service instead of local weights")
    sp.add_argument("--out", required=True)
    sp.add_argument("--raw-out")
    sp.set_defaults(fn=cmd_infer)

    sp = sub.add_parser("report", help="pretty-print evaluation reports")
    sp.add_argument("reports", nargs="+")
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # one-line machine-parsable failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
