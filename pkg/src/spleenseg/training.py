"""Adversarial training loop, slice datasets, and resumable run state.

One train step is one discriminator update (real pair: image with its
one-hot mask; fake pair: image with the generator's softmax output,
detached) followed by one generator update minimizing
``dice + lambda * gan_g``. With gan_enabled off only the Dice step runs,
which is the plain GCN baseline.

Checkpoint tree per run:
    {run}/view-{axial|coronal|sagittal}/epoch-{k}/generator/...
                                                 /discriminator/...
                                                 /loss_history.json
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .losses import gan_losses, soft_dice_loss, total_loss
from .models.checkpoint import load_tensors, save_model, save_tensors, state_dict_tensors
from .models.gcn import GcnGenerator, GeneratorSpec
from .models.patchgan import DiscriminatorSpec, PatchDiscriminator, condition_pair
from .phantom import PhantomScan
from .volio import ViewAxis, extract_slices

VIEW_ORDER = ("axial", "coronal", "sagittal")
VIEW_SEED_OFFSET = {"axial": 0, "coronal": 1, "sagittal": 2}


@dataclass
class TrainConfig:
    lambda_gan: float = 100.0
    lr: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 4
    seed: int = 0
    dice_epsilon: float = 1.0
    views: tuple[str, ...] = ("axial", "coronal", "sagittal")
    gan_enabled: bool = True
    keep_empty_slices: bool = True

    def __post_init__(self):
        self.views = tuple(ViewAxis(v).value for v in self.views)
        if self.lambda_gan < 0:
            raise ValueError("lambda must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.views:
            raise ValueError("at least one view required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["views"] = tuple(d.get("views", ("axial", "coronal", "sagittal")))
        return cls(**d)


def normalize_slice(img: np.ndarray) -> np.ndarray:
    """Min-max normalize one slice to [0, 1]; constant slices map to 0."""
    img = img.astype(np.float32)
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def build_slice_dataset(scans: list[PhantomScan], view: str,
                        keep_empty: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Pool per-view slices from all scans: normalized images and masks."""
    images, masks = [], []
    for scan in scans:
        vol_slices = extract_slices(scan.volume, view)
        mask_slices = extract_slices(scan.mask, view)
        for img, m in zip(vol_slices, mask_slices):
            if not keep_empty and m.sum() == 0:
                continue
            images.append(normalize_slice(img))
            masks.append(m.astype(np.uint8))
    if not images:
        raise ValueError(f"no slices for view {view!r}")
    return np.stack(images), np.stack(masks)


def one_hot_target(masks: torch.Tensor) -> torch.Tensor:
    """[B,S,S] binary masks to [B,2,S,S] one-hot floats."""
    m = masks.float().unsqueeze(1)
    return torch.cat([1.0 - m, m], dim=1)


class Trainer:
    """Owns one generator (and optionally discriminator) for one view."""

    def __init__(self, config: TrainConfig, gen_spec: GeneratorSpec,
                 disc_spec: DiscriminatorSpec | None = None, view: str = "axial"):
        self.config = config
        self.view = ViewAxis(view).value
        seed = (int(config.seed) + VIEW_SEED_OFFSET[self.view]) % (2**63)
        torch.manual_seed(seed)
        self.generator = GcnGenerator(gen_spec)
        self.discriminator = None
        if config.gan_enabled:
            self.discriminator = PatchDiscriminator(disc_spec or DiscriminatorSpec.desk())
        betas = (config.adam_beta1, config.adam_beta2)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=config.lr,
                                      betas=betas, eps=config.adam_eps)
        self.opt_d = None
        if self.discriminator is not None:
            self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=config.lr,
                                          betas=betas, eps=config.adam_eps)
        self.shuffle_rng = np.random.default_rng([int(config.seed), VIEW_SEED_OFFSET[self.view], 7])
        self.epoch = 0
        self.step = 0
        self.history: list[dict] = []

    def train_step(self, images: torch.Tensor, targets: torch.Tensor) -> dict:
        """One D update then one G update on a batch of (image, one-hot) pairs."""
        cfg = self.config
        gan_d_val = 0.0
        gan_g = torch.zeros(())

        if self.discriminator is not None:
            with torch.no_grad():
                fake_probs = torch.softmax(self.generator(images), dim=1)
            self.opt_d.zero_grad()
            d_real = self.discriminator(condition_pair(images, targets))
            d_fake = self.discriminator(condition_pair(images, fake_probs))
            loss_d, _ = gan_losses(d_real, d_fake)
            loss_d.backward()
            self.opt_d.step()
            gan_d_val = float(loss_d.detach())

        self.opt_g.zero_grad()
        logits = self.generator(images)
        probs = torch.softmax(logits, dim=1)
        dice = soft_dice_loss(probs, targets, eps=cfg.dice_epsilon)
        if self.discriminator is not None and cfg.lambda_gan > 0:
            d_fake_g = self.discriminator(condition_pair(images, probs))
            gan_g = F.binary_cross_entropy_with_logits(d_fake_g, torch.ones_like(d_fake_g))
        loss = total_loss(dice, gan_g, cfg.lambda_gan)
        if not torch.isfinite(loss):
            raise RuntimeError(
                f"non-finite loss at step {self.step}: dice={float(dice.detach())}, "
                f"gan_g={float(gan_g.detach()) if torch.is_tensor(gan_g) else gan_g}"
            )
        loss.backward()
        self.opt_g.step()

        record = {
            "step": self.step,
            "dice": float(dice.detach()),
            "gan_g": float(gan_g.detach()) if torch.is_tensor(gan_g) else float(gan_g),
            "gan_d": gan_d_val,
            "total": float(loss.detach()),
        }
        self.history.append(record)
        self.step += 1
        return record

    def run_epoch(self, images: np.ndarray, masks: np.ndarray) -> list[dict]:
        """Shuffle slices across scans and run batched train steps."""
        n = len(images)
        order = self.shuffle_rng.permutation(n)
        records = []
        bs = self.config.batch_size
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            batch_img = torch.from_numpy(images[idx]).unsqueeze(1)
            batch_tgt = one_hot_target(torch.from_numpy(masks[idx]))
            records.append(self.train_step(batch_img, batch_tgt))
        self.epoch += 1
        return records

    # -- resumable state ---------------------------------------------------

    def save_state(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        tensors = {}
        for key, arr in state_dict_tensors(self.generator).items():
            tensors[f"gen.{key}"] = arr
        tensors.update(_adam_tensors("adam_g", self.opt_g))
        if self.discriminator is not None:
            for key, arr in state_dict_tensors(self.discriminator).items():
                tensors[f"disc.{key}"] = arr
            tensors.update(_adam_tensors("adam_d", self.opt_d))
        tensors["torch_rng"] = torch.get_rng_state().numpy()
        save_tensors(directory / "state.tarc", tensors)
        meta = {
            "epoch": self.epoch,
            "step": self.step,
            "view": self.view,
            "shuffle_rng": self.shuffle_rng.bit_generator.state,
            "config": self.config.to_dict(),
        }
        (directory / "state.json").write_text(json.dumps(meta, indent=2))
        (directory / "history.json").write_text(json.dumps(self.history))
        return directory

    def load_state(self, directory) -> None:
        directory = Path(directory)
        tensors = load_tensors(directory / "state.tarc")
        gen_state = {k[len("gen."):]: torch.from_numpy(v)
                     for k, v in tensors.items() if k.startswith("gen.")}
        self.generator.load_state_dict(gen_state)
        _load_adam(self.opt_g, "adam_g", tensors)
        if self.discriminator is not None:
            disc_state = {k[len("disc."):]: torch.from_numpy(v)
                          for k, v in tensors.items() if k.startswith("disc.")}
            self.discriminator.load_state_dict(disc_state)
            _load_adam(self.opt_d, "adam_d", tensors)
        torch.set_rng_state(torch.from_numpy(tensors["torch_rng"]))
        meta = json.loads((directory / "state.json").read_text())
        self.epoch = meta["epoch"]
        self.step = meta["step"]
        state = meta["shuffle_rng"]
        self.shuffle_rng.bit_generator.state = state
        self.history = json.loads((directory / "history.json").read_text())


def _adam_tensors(prefix: str, opt: torch.optim.Adam) -> dict[str, np.ndarray]:
    out = {}
    for idx, st in opt.state_dict()["state"].items():
        for key in ("step", "exp_avg", "exp_avg_sq"):
            val = st[key]
            arr = val.detach().cpu().numpy() if torch.is_tensor(val) else np.asarray(val, dtype=np.float64)
            out[f"{prefix}.{idx}.{key}"] = arr
    return out


def _load_adam(opt: torch.optim.Adam, prefix: str, tensors: dict[str, np.ndarray]) -> None:
    sd = opt.state_dict()
    state: dict[int, dict] = {}
    for name, arr in tensors.items():
        if not name.startswith(prefix + "."):
            continue
        _, idx, key = name.rsplit(".", 2)
        entry = state.setdefault(int(idx), {})
        if key == "step":
            entry[key] = torch.from_numpy(arr.copy())
        else:
            entry[key] = torch.from_numpy(arr.copy())
    sd["state"] = state
    opt.load_state_dict(sd)


def train_experiment(scans: list[PhantomScan], regime: str, config: TrainConfig,
                     gen_spec: GeneratorSpec, disc_spec: DiscriminatorSpec | None,
                     run_dir) -> dict:
    """Train per-view networks and write per-epoch checkpoints.

    ``regime`` is "axial-only" (1 network) or "three-view" (3 independent
    networks, one per view, each trained on every training scan's slices
    from that view).
    """
    if regime == "axial-only":
        views = ("axial",)
    elif regime == "three-view":
        views = ("axial", "coronal", "sagittal")
    else:
        raise ValueError(f"unknown regime {regime!r}")
    if not scans:
        raise ValueError("no training scans")
    run_dir = Path(run_dir)
    summary = {"regime": regime, "views": {}, "epochs": config.epochs}
    for view in views:
        images, masks = build_slice_dataset(scans, view, config.keep_empty_slices)
        trainer = Trainer(config, gen_spec, disc_spec, view=view)
        view_dir = run_dir / f"view-{view}"
        for epoch in range(1, config.epochs + 1):
            records = trainer.run_epoch(images, masks)
            epoch_dir = view_dir / f"epoch-{epoch}"
            save_model(epoch_dir / "generator", trainer.generator)
            if trainer.discriminator is not None:
                save_model(epoch_dir / "discriminator", trainer.discriminator)
            (epoch_dir / "loss_history.json").write_text(json.dumps(records))
        trainer.save_state(view_dir / "state")
        summary["views"][view] = {
            "slices": int(len(images)),
            "steps": trainer.step,
            "final_dice": trainer.history[-1]["dice"] if trainer.history else None,
        }
    return summary
