"""Training objectives for the teacher/student coupling strategies.

All losses are mean-reduced: cross-entropy over the labeled rows, KL over
``kl_mask`` (every observed node). KL is KL(teacher || student).

=========  ==========================================================
strategy   objective
=========  ==========================================================
``mlp``    student cross-entropy only (no teacher)
``kd``     teacher trained first, then a fresh student fits it
``joint``  one loss over shared encoder, teacher and student heads
``alt``    alternating teacher step and student step every epoch
``jkd``    ``joint`` followed by a few epochs of ``kd`` on its student
=========  ==========================================================
"""
from __future__ import annotations

from dataclasses import dataclass

from . import numeric as nm
from .numeric import Tensor

STRATEGIES = ("kd", "joint", "alt", "jkd", "mlp")


@dataclass(frozen=True)
class StrategyConfig:
    strategy: str = "joint"
    alpha: float = 0.2
    lam: float = 20.0
    stage2_epochs: int = 5
    temperature: float = 1.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.stage2_epochs < 0:
            raise ValueError("stage2_epochs must be non-negative")

    @property
    def detach_teacher_in_kl(self) -> bool:
        # only the single-stage joint objective lets KL gradients reach the teacher
        return self.strategy != "joint"


def loss_nc(teacher_logits: Tensor, labels, train_mask) -> Tensor:
    return nm.cross_entropy(teacher_logits, labels, train_mask)


def loss_student(student_logits: Tensor, labels, train_mask) -> Tensor:
    return nm.cross_entropy(student_logits, labels, train_mask)


def loss_kd(student_logits: Tensor, teacher_logits: Tensor, labels, train_mask, kl_mask,
            lam: float, temperature: float = 1.0) -> Tensor:
    """Student CE plus ``lam`` times KL to fixed teacher logits."""
    ce = nm.cross_entropy(student_logits, labels, train_mask)
    kl = nm.kl_div(student_logits, nm.detach(teacher_logits), kl_mask, temperature)
    return nm.add(ce, nm.scale(kl, lam))


def loss_joint(student_logits: Tensor, teacher_logits: Tensor, labels, train_mask, kl_mask,
               alpha: float, lam: float, temperature: float = 1.0,
               detach_teacher: bool = False) -> Tensor:
    """``lam*KL + alpha*CE(teacher) + (1-alpha)*CE(student)``.

    By default the KL term also trains the teacher; ``detach_teacher`` is an
    ablation that turns the teacher logits into a per-step target.
    """
    target = nm.detach(teacher_logits) if detach_teacher else teacher_logits
    kl = nm.kl_div(student_logits, target, kl_mask, temperature)
    ce_t = nm.cross_entropy(teacher_logits, labels, train_mask)
    ce_s = nm.cross_entropy(student_logits, labels, train_mask)
    return nm.add(nm.add(nm.scale(kl, lam), nm.scale(ce_t, alpha)), nm.scale(ce_s, 1.0 - alpha))


def t_step(teacher_logits: Tensor, labels, train_mask) -> Tensor:
    return loss_nc(teacher_logits, labels, train_mask)


def s_step(student_logits: Tensor, teacher_logits: Tensor, labels, train_mask, kl_mask,
           lam: float, temperature: float = 1.0) -> Tensor:
    """Student step of the alternating scheme: teacher logits are a fixed target."""
    return loss_kd(student_logits, teacher_logits, labels, train_mask, kl_mask, lam, temperature)
