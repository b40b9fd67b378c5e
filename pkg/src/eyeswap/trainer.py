"""Dual swap training loop and exemplar-guided inference."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Union

import torch

from . import losses as L
from .corpus import BatchIterator, CorpusManifest
from .imagekit import (DEFAULT_BOX, Domain, EyeBox, FaceImage, composite_eye_region, crop_eye_region,
                       mask_eye_region as mask)
from .nets import DiscriminatorSet, GeneratorBundle, NetConfig, init_bundle, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

MODES = ("full", "half_removal_only", "no_face_recon", "no_eye_recon", "no_f_recon", "no_cc", "with_e_recon")
MODE_ALIASES = {"half": "half_removal_only"}
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.999
    weight_decay: float = 5e-4
    batch: int = 4
    steps: int = 2000
    seed: int = 0
    mode: str = "full"
    strict_composite_output: bool = True
    checkpoint_every: int = 500
    deterministic: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        self.mode = MODE_ALIASES.get(self.mode, self.mode)
        self.validate()

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0 <= self.beta1 < self.beta2 < 1:
            raise ValueError("need 0 <= beta1 < beta2 < 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {tuple(DTYPES)}")

    @property
    def torch_dtype(self):
        return DTYPES[self.dtype]


def effective_weights(weights: L.LossWeights, mode: str) -> L.LossWeights:
    """Loss weights after applying an ablation mode."""
    mode = MODE_ALIASES.get(mode, mode)
    if mode == "no_face_recon":
        return replace(weights, lambda_face=0.0)
    if mode == "no_eye_recon":
        return replace(weights, lambda_eye=0.0)
    if mode == "no_f_recon":
        return replace(weights, lambda_f=0.0)
    if mode == "no_cc":
        return replace(weights, lambda_cc=0.0)
    if mode == "with_e_recon":
        return replace(weights, use_e_recon=True)
    return weights


@dataclass
class TrainState:
    bundle: GeneratorBundle
    discs: DiscriminatorSet
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    config: TrainConfig
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    step: int = 0
    history: list = field(default_factory=list)

    @property
    def box(self) -> EyeBox:
        return self.bundle.box


def make_optimizers(bundle, discs, cfg: TrainConfig):
    kw = dict(lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    return torch.optim.Adam(bundle.parameters(), **kw), torch.optim.Adam(discs.parameters(), **kw)


def init_state(net_cfg: NetConfig, cfg: TrainConfig, weights: Optional[L.LossWeights] = None,
               box: EyeBox = DEFAULT_BOX) -> TrainState:
    bundle, discs = init_bundle(net_cfg, cfg.seed, box, dtype=cfg.torch_dtype)
    opt_g, opt_d = make_optimizers(bundle, discs, cfg)
    return TrainState(bundle, discs, opt_g, opt_d, cfg, weights or L.LossWeights())


def forward_pass(bundle: GeneratorBundle, a: torch.Tensor, b: torch.Tensor, half: bool = False) -> dict:
    """Self-reconstruction, swap, re-encoding and cycle pass.

    ``a`` carries glasses, ``b`` does not; element ``i`` of each batch is
    paired with element ``i`` of the other.
    """
    E_f, G_A, G_B = bundle.E_f, bundle.G_A, bundle.G_B
    E_e_A, E_e_B = bundle.E_e_A, bundle.E_e_B
    box = bundle.box

    out = {}
    out["f_a"] = f_a = E_f(mask(a, box))
    out["f_b"] = f_b = E_f(mask(b, box))
    out["e_a"] = e_a = E_e_A(a)
    out["e_b"] = e_b = E_e_B(b)
    out["a_rec"] = G_A(f_a, e_a, a)
    out["b_rec"] = G_B(f_b, e_b, b)

    out["removal"] = removal = G_B(f_a, e_b, a)
    out["f_removal"] = E_f(mask(removal, box))
    out["e_removal"] = E_e_B(removal)
    if half:
        return out
    out["wearing"] = wearing = G_A(f_b, e_a, b)
    out["f_wearing"] = E_f(mask(wearing, box))
    out["e_wearing"] = E_e_A(wearing)
    out["a_hat"] = G_A(out["f_removal"], out["e_wearing"], removal)
    out["b_hat"] = G_B(out["f_wearing"], out["e_removal"], wearing)
    return out


def generator_terms(out: dict, a, b, discs: DiscriminatorSet, box: EyeBox, half: bool = False) -> dict:
    terms = {
        "face_recon": L.face_recon_loss(a, out["a_rec"], b, out["b_rec"]),
        "eye_recon": L.eye_recon_loss(a, out["a_rec"], b, out["b_rec"], box),
    }
    if half:
        terms["f_recon"] = L.l1_mean(out["f_removal"], out["f_a"])
        terms["e_recon"] = L.l1_mean(out["e_removal"], out["e_b"])
        terms["cycle"] = a.new_zeros(())
        terms["adv_gen"] = L.lsgan_gen_loss(discs.D_B(out["removal"]))
        return terms
    terms["f_recon"], terms["e_recon"] = L.code_recon_loss(
        out["f_removal"], out["f_a"], out["f_wearing"], out["f_b"],
        out["e_removal"], out["e_b"], out["e_wearing"], out["e_a"])
    terms["cycle"] = L.cycle_loss(a, out["a_hat"], b, out["b_hat"])
    terms["adv_gen"] = L.lsgan_gen_loss(discs.D_B(out["removal"])) + L.lsgan_gen_loss(discs.D_A(out["wearing"]))
    return terms


def discriminator_terms(out: dict, a, b, discs: DiscriminatorSet, gamma: float, half: bool = False) -> dict:
    a_req = a.detach().requires_grad_(True)
    b_req = b.detach().requires_grad_(True)
    adv = L.lsgan_disc_loss(discs.D_B(b), discs.D_B(out["removal"].detach()))
    r1 = L.r1_penalty(discs.D_B, b_req, gamma)
    if not half:
        adv = adv + L.lsgan_disc_loss(discs.D_A(a), discs.D_A(out["wearing"].detach()))
        r1 = r1 + L.r1_penalty(discs.D_A, a_req, gamma)
    return {"adv_disc": adv, "r1": r1}


def _check_batches(a, b, res):
    if a.numel() == 0 or b.numel() == 0:
        raise ValueError("empty batch")
    if a.shape != b.shape:
        raise ValueError(f"A-batch {tuple(a.shape)} and B-batch {tuple(b.shape)} differ")
    if a.dim() != 4 or a.shape[1:] != (3, res, res):
        raise ValueError(f"expected (N, 3, {res}, {res}) batches, got {tuple(a.shape)}")


def dual_step(state: TrainState, a_batch, b_batch, weights: Optional[L.LossWeights] = None) -> L.LossReport:
    """One discriminator update followed by one generator update."""
    a = a_batch.pixels.unsqueeze(0) if isinstance(a_batch, FaceImage) else a_batch
    b = b_batch.pixels.unsqueeze(0) if isinstance(b_batch, FaceImage) else b_batch
    if isinstance(a_batch, FaceImage) and a_batch.domain is Domain.B:
        raise ValueError("a_batch must hold faces with glasses")
    if isinstance(b_batch, FaceImage) and b_batch.domain is Domain.A:
        raise ValueError("b_batch must hold faces without glasses")
    bundle, discs = state.bundle, state.discs
    _check_batches(a, b, bundle.config.resolution)
    dtype = next(bundle.parameters()).dtype
    a, b = a.to(dtype), b.to(dtype)
    w = effective_weights(weights or state.weights, state.config.mode)
    half = state.config.mode == "half_removal_only"
    bundle.train()
    discs.train()

    out = forward_pass(bundle, a, b, half)

    state.opt_d.zero_grad(set_to_none=True)
    d_terms = discriminator_terms(out, a, b, discs, w.r1_gamma, half)
    total_disc = d_terms["adv_disc"] + d_terms["r1"]
    total_disc.backward()
    state.opt_d.step()

    state.opt_g.zero_grad(set_to_none=True)
    g_terms = generator_terms(out, a, b, discs, bundle.box, half)
    g_terms.update(d_terms)
    total_gen, _ = L.total_losses(g_terms, w)
    total_gen.backward()
    state.opt_g.step()
    # generator backward also reaches the discriminators; drop those grads
    state.opt_d.zero_grad(set_to_none=True)

    state.step += 1
    report = L.LossReport(**{k: float(v.detach()) for k, v in g_terms.items()},
                          total_gen=float(total_gen.detach()), total_disc=float(total_disc.detach()))
    state.history.append(report)
    return report


# --- checkpoints --------------------------------------------------------------

def save_state(state: TrainState, path) -> Path:
    extra = {
        "train_config": asdict(state.config),
        "loss_weights": asdict(state.weights),
        "step": state.step,
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "history": [asdict(r) for r in state.history],
    }
    return save_checkpoint(path, state.bundle, state.discs, extra)


def load_state(path, config: Optional[TrainConfig] = None, net_cfg: Optional[NetConfig] = None) -> TrainState:
    bundle, discs, extra = load_checkpoint(path, net_cfg)
    cfg = config or TrainConfig(**extra.get("train_config", {}))
    weights = L.LossWeights(**extra.get("loss_weights", {}))
    if discs is None:
        discs = DiscriminatorSet(bundle.config).to(next(bundle.parameters()).dtype)
    opt_g, opt_d = make_optimizers(bundle, discs, cfg)
    if "opt_g" in extra:
        opt_g.load_state_dict(extra["opt_g"])
        opt_d.load_state_dict(extra["opt_d"])
    history = [L.LossReport(**r) for r in extra.get("history", [])]
    return TrainState(bundle, discs, opt_g, opt_d, cfg, weights, int(extra.get("step", 0)), history)


def set_determinism(on: bool = True):
    torch.use_deterministic_algorithms(on)


def train(config: TrainConfig, manifest: CorpusManifest, net_cfg: Optional[NetConfig] = None,
          weights: Optional[L.LossWeights] = None, out_dir=None, resume=None,
          log_every: int = 50, on_step: Optional[Callable[[TrainState, L.LossReport], None]] = None):
    """Run ``config.steps`` dual steps; returns ``(state, reports)``.

    With ``out_dir`` set, loss lines go to ``logs/losses.jsonl`` and
    checkpoints to ``checkpoints/step_K.ckpt``. ``resume`` is a checkpoint
    path whose step count becomes the starting point.
    """
    manifest.require_trainable()
    if config.deterministic:
        set_determinism(True)
    if resume is not None:
        state = load_state(resume, config, net_cfg)
        if weights is not None:
            state.weights = weights
    else:
        net_cfg = net_cfg or NetConfig(resolution=manifest.resolution)
        state = init_state(net_cfg, config, weights)
    if state.bundle.config.resolution != manifest.resolution:
        raise ValueError(f"net resolution {state.bundle.config.resolution} != corpus {manifest.resolution}")
    batches = BatchIterator(manifest, config.batch, config.seed, training=True,
                            start_step=state.step, dtype=config.torch_dtype)
    log_file = ckpt_dir = None
    if out_dir is not None:
        out = Path(out_dir)
        (out / "logs").mkdir(parents=True, exist_ok=True)
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "logs" / "losses.jsonl", "a" if resume is not None else "w")
    reports = []
    t0 = time.time()
    try:
        while state.step < config.steps:
            a, b = next(batches)
            report = dual_step(state, a, b)
            reports.append(report)
            if log_file is not None:
                log_file.write(json.dumps(report.to_json_dict(state.step)) + "\n")
                log_file.flush()
            if on_step is not None:
                on_step(state, report)
            if log_every and state.step % log_every == 0:
                log.info("step %d  gen %.4f  disc %.4f  eye %.4f  (%.1fs)", state.step, report.total_gen,
                         report.total_disc, report.eye_recon, time.time() - t0)
            if ckpt_dir is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                save_state(state, ckpt_dir / f"step_{state.step}.ckpt")
        if ckpt_dir is not None and not (ckpt_dir / f"step_{state.step}.ckpt").exists():
            save_state(state, ckpt_dir / f"step_{state.step}.ckpt")
    finally:
        if log_file is not None:
            log_file.close()
    return state, reports


# --- inference ------------------------------------------------------------------

def _bundle_of(state: Union[TrainState, GeneratorBundle]) -> GeneratorBundle:
    bundle = state.bundle if isinstance(state, TrainState) else state
    if not isinstance(bundle, GeneratorBundle):
        raise TypeError("expected a TrainState or GeneratorBundle")
    return bundle


def _pixels(img) -> torch.Tensor:
    return img.pixels if isinstance(img, FaceImage) else img


def _swap(state, img, exemplar, src_domain: Domain, strict: bool) -> FaceImage:
    bundle = _bundle_of(state)
    if isinstance(img, FaceImage) and img.domain not in (src_domain, Domain.UNKNOWN):
        raise ValueError(f"input must be tagged {src_domain.value}")
    dst = src_domain.other
    x = _pixels(img)
    dtype = next(bundle.parameters()).dtype
    was_training = bundle.training
    bundle.eval()
    with torch.no_grad():
        xb = x.unsqueeze(0).to(dtype)
        f = bundle.encode_appearance(xb, src_domain)
        e = bundle.encode_eye(_pixels(exemplar).unsqueeze(0).to(dtype), dst)
        y = bundle.decode(f, e, dst, xb)[0]
    bundle.train(was_training)
    y = y.to(x.dtype)
    if strict:
        y = composite_eye_region(x, crop_eye_region(y, bundle.box), bundle.box)
    source_id = img.source_id if isinstance(img, FaceImage) else ""
    return FaceImage(y.clamp(-1, 1), dst, source_id)


def _strict_default(state, strict):
    if strict is not None:
        return strict
    return state.config.strict_composite_output if isinstance(state, TrainState) else True


def remove_glasses(state, img_a, exemplar_b, strict: Optional[bool] = None) -> FaceImage:
    """Decode ``img_a``'s appearance with the exemplar's no-glasses eye code."""
    return _swap(state, img_a, exemplar_b, Domain.A, _strict_default(state, strict))


def wear_glasses(state, img_b, exemplar_a, strict: Optional[bool] = None) -> FaceImage:
    return _swap(state, img_b, exemplar_a, Domain.B, _strict_default(state, strict))


def eye_code(state, img, domain) -> torch.Tensor:
    bundle = _bundle_of(state)
    dtype = next(bundle.parameters()).dtype
    with torch.no_grad():
        return bundle.encode_eye(_pixels(img).unsqueeze(0).to(dtype), domain)[0]


def interpolate_eyes(state, img, e_start: torch.Tensor, e_end: torch.Tensor, n: int,
                     domain=Domain.B) -> list[FaceImage]:
    """Decode ``img`` with eye codes on the segment from ``e_start`` to ``e_end``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    bundle = _bundle_of(state)
    domain = Domain.parse(domain)
    x = _pixels(img)
    dtype = next(bundle.parameters()).dtype
    was_training = bundle.training
    bundle.eval()
    frames = []
    with torch.no_grad():
        xb = x.unsqueeze(0).to(dtype)
        f = bundle.encode_appearance(xb, domain)
        for i in range(n):
            alpha = i / (n - 1)
            e = (1 - alpha) * e_start.to(dtype) + alpha * e_end.to(dtype)
            y = bundle.decode(f, e.unsqueeze(0), domain, xb)[0]
            frames.append(FaceImage(y.to(x.dtype).clamp(-1, 1), domain))
    bundle.train(was_training)
    return frames
