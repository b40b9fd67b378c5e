"""Training objectives: reconstruction, code, cycle, least-squares adversarial and R1."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import torch

from .imagekit import DEFAULT_BOX, EyeBox, crop_eye_region


@dataclass
class LossWeights:
    lambda_face: float = 10.0
    lambda_eye: float = 10.0
    use_e_recon: bool = False
    r1_gamma: float = 10.0
    # unit weights on the remaining terms; exposed so ablations can zero them
    lambda_f: float = 1.0
    lambda_e: float = 1.0
    lambda_cc: float = 1.0
    lambda_adv: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "use_e_recon" and v < 0:
                raise ValueError(f"{f.name} must be >= 0, got {v}")


REPORT_KEYS = ("face_recon", "eye_recon", "f_recon", "e_recon", "cycle",
               "adv_gen", "adv_disc", "r1", "total_gen", "total_disc")


@dataclass
class LossReport:
    face_recon: float = 0.0
    eye_recon: float = 0.0
    f_recon: float = 0.0
    e_recon: float = 0.0
    cycle: float = 0.0
    adv_gen: float = 0.0
    adv_disc: float = 0.0
    r1: float = 0.0
    total_gen: float = 0.0
    total_disc: float = 0.0

    def to_json_dict(self, step: int) -> dict:
        return {"step": step, **asdict(self)}


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_mean(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape(a, b)
    return (a - b).abs().mean()


def face_recon_loss(x, x_recon, y, y_recon):
    return l1_mean(x_recon, x) + l1_mean(y_recon, y)


def eye_recon_loss(x, x_recon, y, y_recon, box: EyeBox = DEFAULT_BOX):
    _same_shape(x, x_recon)
    _same_shape(y, y_recon)
    return (l1_mean(crop_eye_region(x_recon, box), crop_eye_region(x, box))
            + l1_mean(crop_eye_region(y_recon, box), crop_eye_region(y, box)))


def code_recon_loss(f_removal, f_a, f_wearing, f_b, e_removal, e_b, e_wearing, e_a):
    """Appearance and eye-code reconstruction after the swap.

    The removal output carries ``a``'s appearance and ``b``'s eye code; the
    wearing output the reverse. Returns ``(f_term, e_term)``; whether the
    eye term counts toward the total is decided by :func:`total_losses`.
    """
    f_term = l1_mean(f_removal, f_a) + l1_mean(f_wearing, f_b)
    e_term = l1_mean(e_removal, e_b) + l1_mean(e_wearing, e_a)
    return f_term, e_term


def cycle_loss(x, x_hat, y, y_hat):
    return l1_mean(x_hat, x) + l1_mean(y_hat, y)


def lsgan_disc_loss(real_maps: Sequence[torch.Tensor], fake_maps: Sequence[torch.Tensor]):
    if len(real_maps) != len(fake_maps):
        raise ValueError(f"{len(real_maps)} real scales vs {len(fake_maps)} fake scales")
    total = 0.0
    for r, f in zip(real_maps, fake_maps):
        total = total + ((r - 1) ** 2).mean() + (f ** 2).mean()
    return total


def lsgan_gen_loss(fake_maps: Sequence[torch.Tensor]):
    total = 0.0
    for f in fake_maps:
        total = total + ((f - 1) ** 2).mean()
    return total


def r1_penalty(disc: Callable, real_batch: torch.Tensor, gamma: float = 10.0) -> torch.Tensor:
    """``gamma/2`` times the batch-mean squared gradient norm of the real scores.

    ``disc`` may return a tensor or a list of per-scale score maps; all
    scores are summed before differentiation.
    """
    if not real_batch.requires_grad:
        raise ValueError("real_batch must require grad for the R1 penalty")
    out = disc(real_batch)
    maps = out if isinstance(out, (list, tuple)) else [out]
    score = sum(m.sum() for m in maps)
    if not score.requires_grad:
        # scores do not depend on the input at all
        return real_batch.new_zeros(())
    (grad,) = torch.autograd.grad(score, real_batch, create_graph=True, allow_unused=True)
    if grad is None:
        return real_batch.new_zeros(())
    return 0.5 * gamma * grad.pow(2).flatten(1).sum(1).mean()


def total_losses(terms: dict, weights: LossWeights):
    """Weighted generator objective and discriminator objective."""
    weights.validate()
    total_gen = (weights.lambda_face * terms["face_recon"]
                 + weights.lambda_eye * terms["eye_recon"]
                 + weights.lambda_f * terms["f_recon"]
                 + weights.lambda_cc * terms["cycle"]
                 + weights.lambda_adv * terms["adv_gen"])
    if weights.use_e_recon:
        total_gen = total_gen + weights.lambda_e * terms["e_recon"]
    total_disc = terms["adv_disc"] + terms["r1"]
    return total_gen, total_disc
