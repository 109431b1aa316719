"""Identity-student diagnostic: a student that only echoes teacher soft-labels.

The student's input features are the teacher logits of each observed node
and its encoder and head are the identity. It reproduces the teacher on
transductive nodes. Inductive nodes have no teacher prediction, so they get
uniform (all-zero) logits and the student falls to chance there.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import models as md
from .graph import InductivePartition
from .numeric import SparseMatrix
from .train import TrainConfig, accuracy, fit_teacher


class SoftLabelDiagnostic(NamedTuple):
    tran_acc: float | None
    ind_acc: float | None
    teacher_tran_acc: float | None


def identity_student(n_classes: int) -> tuple[dict, md.ModelConfig]:
    cfg = md.ModelConfig(n_dims=n_classes, n_classes=n_classes, encoder_layers=0,
                         student_head_layers=1)
    params = {"stu.head.W0": np.eye(n_classes), "stu.head.b0": np.zeros((1, n_classes))}
    return params, cfg


def soft_label_diagnostic(partition: InductivePartition, teacher_logits: np.ndarray) -> SoftLabelDiagnostic:
    """Score the identity student fed ``teacher_logits`` as features."""
    g = partition.full_graph
    feats = np.array(teacher_logits, dtype=np.float64)
    feats[partition.inductive_nodes] = 0.0
    params, cfg = identity_student(g.n_classes)
    logits = md.student_forward(md.constants(params), SparseMatrix.from_dense(feats), cfg).data
    return SoftLabelDiagnostic(
        accuracy(logits, g.labels, partition.transductive_test_nodes),
        accuracy(logits, g.labels, partition.inductive_nodes),
        accuracy(teacher_logits, g.labels, partition.transductive_test_nodes),
    )


def run_soft_label_diagnostic(partition: InductivePartition, cfg: TrainConfig) -> SoftLabelDiagnostic:
    """Train a teacher on the observed graph, then run the identity student."""
    params, mcfg, part = fit_teacher(partition, cfg)
    logits = md.teacher_forward(md.constants(params), part.observed_graph, mcfg).data
    return soft_label_diagnostic(part, logits)
