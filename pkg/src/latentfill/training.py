"""Training orchestration for the two phases.

Phase "pretrain-gan" trains the mapping+synthesis pair against a small
image-only discriminator with the non-saturating loss. Phase
"train-encoder" freezes the generator and optimizes the encoder, decoder,
inversion head, and fusion projections with the full objective, updating
its own [image ; edge] discriminator 1:1 per step.

All per-step randomness (batch order, masks, synthesis noise, latent
resampling) is derived statelessly from (seed, step), so a run resumed
from a checkpoint continues the exact trajectory of an unbroken run.
"""

from __future__ import annotations

import json
import logging
import zlib
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from latentfill.checkpoint import load_checkpoint, save_checkpoint
from latentfill.config import TrainConfig, config_hash, load_config, write_config
from latentfill.extractor import FrozenPyramidExtractor
from latentfill.losses import (
    Discriminator,
    LossWeights,
    adversarial_g_loss,
    discriminator_hinge_loss,
    fidelity_loss,
    msr_loss,
    downscale_ground_truth,
    perceptual_loss,
    total_loss,
)
from latentfill.masking import MaskSpec, generate_mask
from latentfill.modeling.inversion import MeanLatentState, sample_mean_latent, soft_update
from latentfill.modeling.pipeline import assemble_input, build_model

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def _derive_seed(*parts) -> int:
    return zlib.crc32(":".join(str(p) for p in parts).encode()) & 0x7FFFFFFF


class Trainer:
    def __init__(self, cfg: TrainConfig, samples, workdir=None):
        if not samples:
            raise TrainingError("empty corpus")
        self.cfg = cfg
        self.samples = samples
        self.workdir = Path(workdir) if workdir else None
        torch.manual_seed(cfg.seed)
        self.model = build_model(cfg.model)
        disc_in = 4 if cfg.phase == "train-encoder" else 3
        self.disc = Discriminator(disc_in, cfg.model.disc_base)
        self.extractor = FrozenPyramidExtractor()
        self.weights = LossWeights(cfg.lambda_msr, cfg.lambda_fid)
        self.step = 0
        self._collapse_run = 0

        if cfg.phase == "train-encoder":
            trainable = list(self.model.encoder_parameters())
            frozen = list(self.model.generator_parameters())
            if cfg.freeze_generator:
                for p in frozen:
                    p.requires_grad_(False)
            else:
                trainable += frozen
        else:
            trainable = list(self.model.generator.parameters())
        self._trainable = trainable
        self.opt_g = torch.optim.Adam(trainable, lr=cfg.lr, betas=(0.9, 0.999))
        self.opt_d = torch.optim.Adam(self.disc.parameters(), lr=cfg.lr, betas=(0.9, 0.999))

        self.latent = MeanLatentState(
            online=self._sample_latent(0),
            target=self._sample_latent(1),
            tau=cfg.tau,
        )
        self._metrics_fh = None
        if self.workdir:
            self.workdir.mkdir(parents=True, exist_ok=True)
            self._metrics_fh = open(self.workdir / "metrics.jsonl", "a", encoding="utf-8")

    # ------------------------------------------------------------------ data

    def _sample_latent(self, draw_index: int) -> np.ndarray:
        return sample_mean_latent(
            self.model.generator.mapping,
            self.cfg.mean_latent_samples,
            self.model.num_style_layers,
            seed=_derive_seed(self.cfg.seed, "latent", draw_index),
        )

    def _indices(self, step: int) -> np.ndarray:
        n = len(self.samples)
        b = self.cfg.batch
        per_epoch = max(n // b, 1)
        epoch, pos = divmod(step, per_epoch)
        rng = np.random.Generator(np.random.PCG64([self.cfg.seed & 0xFFFFFFFF, 77, epoch]))
        perm = rng.permutation(n)
        idx = perm[pos * b : pos * b + b]
        if len(idx) < b:
            idx = np.concatenate([idx, perm[: b - len(idx)]])
        return idx

    def mask_for(self, step: int, position: int, sample_index: int) -> np.ndarray:
        cfg = self.cfg
        s = cfg.model.resolution
        if cfg.fixed_masks:
            seed = _derive_seed(cfg.seed, "fixed-mask", sample_index)
            rng = np.random.Generator(np.random.PCG64(seed))
        else:
            seed = _derive_seed(cfg.seed, "mask", step, position)
            rng = np.random.Generator(np.random.PCG64(seed))
        bucket = cfg.mask_buckets[rng.integers(len(cfg.mask_buckets))]
        return generate_mask(MaskSpec(cfg.mask_kind, bucket, seed), s, s)

    def _batch(self, step: int):
        idx = self._indices(step)
        images = torch.from_numpy(np.stack([self.samples[i].image for i in idx]))
        edges = torch.from_numpy(
            np.stack([self.samples[i].edge for i in idx]).astype(np.float32)
        )[:, None]
        segs = torch.from_numpy(np.stack([self.samples[i].seg for i in idx]))
        masks = torch.from_numpy(
            np.stack([self.mask_for(step, pos, i) for pos, i in enumerate(idx)])
        )
        return images, edges, segs, masks

    # ----------------------------------------------------------------- steps

    def _log(self, step: int, terms: dict):
        if self._metrics_fh and step % self.cfg.log_every == 0:
            for name, value in terms.items():
                self._metrics_fh.write(
                    json.dumps({"step": step, "term": name, "value": float(value)}) + "\n"
                )
            self._metrics_fh.flush()

    def train_step(self) -> dict:
        terms = (
            self._encoder_step()
            if self.cfg.phase == "train-encoder"
            else self._pretrain_step()
        )
        self._log(self.step, terms)
        self.step += 1
        return terms

    def _gt_scales(self, images, edges, segs):
        s = self.cfg.model.resolution
        return downscale_ground_truth(images, edges, segs, [s // 4, s // 2, s])

    def _encoder_step(self) -> dict:
        cfg = self.cfg
        images, edges, segs, masks = self._batch(self.step)
        enc_in = assemble_input(images, masks, edges, segs, cfg.model.num_labels)
        gt_maps = None
        if cfg.model.guidance == "gt":
            from latentfill.modeling.pipeline import one_hot_seg

            gt_maps = [
                torch.cat([one_hot_seg(seg_s, cfg.model.num_labels), edge_s], dim=1)
                for _, edge_s, seg_s in self._gt_scales(images, edges, segs)
            ]
        noise_seed = _derive_seed(cfg.seed, "noise", self.step)
        out = self.model(enc_in, gt_maps=gt_maps, noise_seed=noise_seed)
        fake_pair = torch.cat([out["image"], out["preds"]["edge"][2]], dim=1)
        real_pair = torch.cat([images, edges], dim=1)

        # discriminator update (1:1 with the main model)
        self.opt_d.zero_grad(set_to_none=True)
        d_loss = discriminator_hinge_loss(
            self.disc(real_pair), self.disc(fake_pair.detach())
        )
        if not torch.isfinite(d_loss):
            raise TrainingError("non-finite loss term: d_hinge")
        d_loss.backward()
        torch.nn.utils.clip_grad_norm_(self.disc.parameters(), cfg.grad_clip)
        self.opt_d.step()

        # main model update
        l_p = perceptual_loss(out["image"], images, self.extractor)
        l_adv = adversarial_g_loss(self.disc(fake_pair))
        l_ipt = l_p + l_adv
        l_msr = msr_loss(
            out["preds"], self._gt_scales(images, edges, segs), self.extractor
        )
        w_bar = torch.from_numpy(self.latent.online).to(out["w_star"].dtype)
        l_fid = torch.stack(
            [fidelity_loss(w_b, w_bar) for w_b in out["w_star"]]
        ).mean()
        parts = {"ipt": l_ipt, "msr": l_msr, "fid": l_fid}
        loss = total_loss(parts, self.weights)
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self._trainable, cfg.grad_clip)
        self.opt_g.step()

        self.latent = soft_update(self.latent, resampler=self._sample_latent)
        return {
            "total": loss.item(),
            "ipt": l_ipt.item(),
            "perceptual": l_p.item(),
            "adv_g": l_adv.item(),
            "msr": l_msr.item(),
            "fid": l_fid.item(),
            "d_hinge": d_loss.item(),
        }

    def _pretrain_step(self) -> dict:
        cfg = self.cfg
        images, _, _, _ = self._batch(self.step)
        gen = torch.Generator().manual_seed(_derive_seed(cfg.seed, "z", self.step))
        z = torch.randn(cfg.batch, 512, generator=gen)
        noise_seed = _derive_seed(cfg.seed, "noise", self.step)
        fake = self.model.generator(z, noise_seed=noise_seed)

        self.opt_d.zero_grad(set_to_none=True)
        d_loss = F.softplus(self.disc(fake.detach())).mean() + F.softplus(
            -self.disc(images)
        ).mean()
        if not torch.isfinite(d_loss):
            raise TrainingError("non-finite loss term: d_nonsat")
        d_loss.backward()
        torch.nn.utils.clip_grad_norm_(self.disc.parameters(), cfg.grad_clip)
        self.opt_d.step()

        g_loss = F.softplus(-self.disc(fake)).mean()
        if not torch.isfinite(g_loss):
            raise TrainingError("non-finite loss term: g_nonsat")
        self.opt_g.zero_grad(set_to_none=True)
        g_loss.backward()
        torch.nn.utils.clip_grad_norm_(self._trainable, cfg.grad_clip)
        self.opt_g.step()

        self._collapse_run = self._collapse_run + 1 if g_loss.item() > 10.0 else 0
        if self._collapse_run == 500:
            log.warning(
                "generator loss stuck above 10 for 500 steps; possible mode collapse"
            )
        return {"g_nonsat": g_loss.item(), "d_nonsat": d_loss.item()}

    def run(self, steps=None) -> dict:
        last = {}
        for _ in range(steps if steps is not None else self.cfg.steps):
            last = self.train_step()
        return last

    # ------------------------------------------------------------ evaluation

    @torch.no_grad()
    def masked_l1(self) -> float:
        """Mean absolute error over masked pixels under the training masks."""
        self.model.eval()
        total, count = 0.0, 0.0
        for i, sample in enumerate(self.samples):
            mask = self.mask_for(0, i, i)
            raw, _ = self.model.infer(sample.image, mask)
            diff = np.abs(raw - sample.image) * mask
            total += diff.sum()
            count += mask.sum() * 3
        self.model.train()
        return total / count

    # ----------------------------------------------------------- checkpoints

    def _optimizer_arrays(self, opt, prefix, params):
        arrays = {}
        for i, p in enumerate(params):
            state = opt.state.get(p)
            if not state:
                continue
            arrays[f"{prefix}.{i}.step"] = np.asarray(
                state["step"].detach().cpu().numpy()
                if torch.is_tensor(state["step"])
                else state["step"],
                dtype=np.float32,
            )
            arrays[f"{prefix}.{i}.exp_avg"] = state["exp_avg"].detach().cpu().numpy()
            arrays[f"{prefix}.{i}.exp_avg_sq"] = (
                state["exp_avg_sq"].detach().cpu().numpy()
            )
        return arrays

    def _load_optimizer_arrays(self, opt, prefix, params, arrays):
        for i, p in enumerate(params):
            key = f"{prefix}.{i}.step"
            if key not in arrays:
                continue
            opt.state[p] = {
                "step": torch.tensor(float(np.asarray(arrays[key]).reshape(-1)[0])),
                "exp_avg": torch.from_numpy(arrays[f"{prefix}.{i}.exp_avg"].copy()),
                "exp_avg_sq": torch.from_numpy(
                    arrays[f"{prefix}.{i}.exp_avg_sq"].copy()
                ),
            }

    def save(self, path) -> None:
        arrays = {}
        for name, tensor in self.model.state_dict().items():
            arrays[f"model.{name}"] = tensor.detach().cpu().numpy()
        for name, tensor in self.disc.state_dict().items():
            arrays[f"disc.{name}"] = tensor.detach().cpu().numpy()
        arrays.update(self._optimizer_arrays(self.opt_g, "opt_g", self._trainable))
        arrays.update(
            self._optimizer_arrays(self.opt_d, "opt_d", list(self.disc.parameters()))
        )
        arrays["latent.online"] = self.latent.online
        arrays["latent.target"] = self.latent.target
        meta = {
            "step": self.step,
            "phase": self.cfg.phase,
            "config_hash": config_hash(self.cfg),
            "latent_tau": self.latent.tau,
            "latent_resamples": self.latent.resamples,
            "resolution": self.cfg.model.resolution,
            "num_labels": self.cfg.model.num_labels,
        }
        save_checkpoint(path, arrays, meta)
        write_config(self.cfg, Path(path) / "config.ini")

    def load(self, path) -> None:
        arrays, meta = load_checkpoint(path)
        own_hash = config_hash(self.cfg)
        if meta.get("config_hash") != own_hash:
            raise TrainingError(
                f"checkpoint config hash {meta.get('config_hash')} does not match "
                f"current config {own_hash}"
            )
        model_state = {
            k[len("model.") :]: torch.from_numpy(v.copy())
            for k, v in arrays.items()
            if k.startswith("model.")
        }
        self.model.load_state_dict(model_state)
        disc_state = {
            k[len("disc.") :]: torch.from_numpy(v.copy())
            for k, v in arrays.items()
            if k.startswith("disc.")
        }
        self.disc.load_state_dict(disc_state)
        self._load_optimizer_arrays(self.opt_g, "opt_g", self._trainable, arrays)
        self._load_optimizer_arrays(
            self.opt_d, "opt_d", list(self.disc.parameters()), arrays
        )
        self.latent = MeanLatentState(
            online=arrays["latent.online"],
            target=arrays["latent.target"],
            tau=float(meta["latent_tau"]),
            resamples=int(meta["latent_resamples"]),
        )
        self.step = int(meta["step"])


def load_model_for_inference(path, cfg: TrainConfig | None = None):
    """Rebuild the model a checkpoint was trained with and load its weights.

    The checkpoint directory carries its own config.ini; pass cfg only to
    override it.
    """
    if cfg is None:
        cfg = load_config(Path(path) / "config.ini")
    arrays, meta = load_checkpoint(path)
    model = build_model(cfg.model)
    state = {
        k[len("model.") :]: torch.from_numpy(v.copy())
        for k, v in arrays.items()
        if k.startswith("model.")
    }
    model.load_state_dict(state)
    model.eval()
    return model, meta


def load_generator_weights(model, path) -> None:
    """Initialize just the generator core from a pretraining checkpoint."""
    arrays, _ = load_checkpoint(path)
    prefix = "model.generator."
    state = {
        k[len(prefix) :]: torch.from_numpy(v.copy())
        for k, v in arrays.items()
        if k.startswith(prefix)
    }
    if not state:
        raise TrainingError(f"no generator weights found in {path}")
    model.generator.load_state_dict(state)
