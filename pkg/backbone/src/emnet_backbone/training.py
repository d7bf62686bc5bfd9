"""Training procedures: teacher fine-tune and the two-stage student transfer.

Stage 1 regresses the student's matched conv output onto the fine-tuned
teacher's pool5 features (squared-error minimization; only the conv
parameters move).  Stage 2 re-initialises the fully-connected layers with a
Gaussian and trains everything jointly under cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .arch import Emnet, TeacherModel


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 200
    learning_rate: float = 1e-3
    decay_every: int = 50
    decay_factor: float = 0.1
    batch_size: int = 32
    momentum: float = 0.9
    crop: int = 224

    def __post_init__(self):
        if min(self.epochs, self.decay_every, self.batch_size) < 1:
            raise ValueError("epochs, decay_every and batch_size must be positive")
        if self.learning_rate <= 0 or not 0 < self.decay_factor <= 1:
            raise ValueError("learning_rate must be positive, decay_factor in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.crop != 224:
            raise ValueError(f"input crop is fixed at 224, got {self.crop}")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay_factor ** (epoch // self.decay_every)


def _check_images(images: torch.Tensor, crop: int):
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (crop, crop):
        raise ValueError(
            f"images must be (N, 3, {crop}, {crop}), got {tuple(images.shape)}"
        )


def _check_labels(labels: torch.Tensor, num_classes: int):
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(
            f"labels span [{int(labels.min())}, {int(labels.max())}] but the head has "
            f"{num_classes} classes"
        )


def stage1_loss(student_feats: torch.Tensor, teacher_feats: torch.Tensor) -> torch.Tensor:
    """Per-example squared L2 distance between feature maps, batch-averaged."""
    if student_feats.shape != teacher_feats.shape:
        raise ValueError(
            f"feature shapes differ: student {tuple(student_feats.shape)}, "
            f"teacher {tuple(teacher_feats.shape)}; check the matching 1x1 convolution"
        )
    diff = student_feats - teacher_feats
    return diff.flatten(1).pow(2).sum(dim=1).mean()


def cross_entropy_from_probs(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cross-entropy straight from predicted class probabilities, averaged
    per example: 0 for one-hot-correct predictions, ln(num_classes) for
    uniform ones."""
    picked = probs[torch.arange(probs.shape[0]), labels]
    return -torch.log(picked).mean()


def _run_sgd(parameters, schedule, batches, loss_fn, max_steps=None, max_grad_norm=10.0):
    """Epoch loop with step-decayed SGD; returns the per-step loss trace.

    Gradients are norm-clipped (from-scratch deep ReLU stacks at a fixed
    learning rate spike otherwise).
    """
    params = [p for p in parameters if p.requires_grad]
    optimizer = torch.optim.SGD(params, lr=schedule.learning_rate, momentum=schedule.momentum)
    trace = []
    step = 0
    for epoch in range(schedule.epochs):
        for group in optimizer.param_groups:
            group["lr"] = schedule.lr_at(epoch)
        for batch in batches:
            optimizer.zero_grad()
            loss = loss_fn(*batch)
            loss.backward()
            if max_grad_norm is not None:
                nn.utils.clip_grad_norm_(params, max_grad_norm)
            optimizer.step()
            trace.append(float(loss.detach()))
            step += 1
            if max_steps is not None and step >= max_steps:
                return trace
    return trace


def _batches(tensors, batch_size):
    n = tensors[0].shape[0]
    out = []
    for lo in range(0, n, batch_size):
        out.append(tuple(t[lo : lo + batch_size] for t in tensors))
    return out


def finetune_teacher(teacher: TeacherModel, images, labels, num_classes: int,
                     schedule: TrainSchedule = TrainSchedule(), max_steps=None,
                     frozen_stages: int = 2):
    """Fine-tune the face backbone for expression classification.

    Replaces the classification head for the task's class count, freezes the
    bottom two convolution stages, and minimizes cross-entropy.  Returns the
    per-step loss trace.
    """
    images = torch.as_tensor(images, dtype=torch.float32)
    labels = torch.as_tensor(labels, dtype=torch.long)
    _check_images(images, schedule.crop)
    teacher.replace_head(num_classes)
    _check_labels(labels, num_classes)
    teacher.freeze_bottom_stages(frozen_stages)
    teacher.train()

    def loss_fn(x, y):
        return F.cross_entropy(teacher(x), y)

    trace = _run_sgd(teacher.parameters(), schedule, _batches((images, labels),
                     schedule.batch_size), loss_fn, max_steps)
    teacher.eval()
    return trace


def train_emnet_stage1(teacher: TeacherModel, student: Emnet, images,
                       schedule: TrainSchedule = TrainSchedule(), max_steps=None):
    """Regress the student's matched conv output onto the teacher's pool5
    features; only conv parameters are optimized.  Returns the loss trace."""
    images = torch.as_tensor(images, dtype=torch.float32)
    _check_images(images, schedule.crop)
    teacher.eval()
    student.train()
    with torch.no_grad():
        targets = torch.cat(
            [teacher.feature_map(b) for (b,) in _batches((images,), schedule.batch_size)]
        )

    def loss_fn(x, g):
        return stage1_loss(student.convs(x), g)

    trace = _run_sgd(student.conv_parameters(), schedule,
                     _batches((images, targets), schedule.batch_size), loss_fn, max_steps)
    student.eval()
    return trace


def train_emnet_stage2(student: Emnet, images, labels,
                       schedule: TrainSchedule = TrainSchedule(), max_steps=None,
                       head_init_std: float = 0.01, seed: int = 0):
    """Joint cross-entropy training of the stage-1 convs together with the
    freshly Gaussian-initialised fully-connected layers."""
    images = torch.as_tensor(images, dtype=torch.float32)
    labels = torch.as_tensor(labels, dtype=torch.long)
    _check_images(images, schedule.crop)
    _check_labels(labels, student.spec.num_classes)
    generator = torch.Generator().manual_seed(seed)
    student.gaussian_init_head(std=head_init_std, generator=generator)
    student.train()

    def loss_fn(x, y):
        return F.cross_entropy(student(x), y)

    trace = _run_sgd(student.parameters(), schedule,
                     _batches((images, labels), schedule.batch_size), loss_fn, max_steps)
    student.eval()
    return trace


@torch.no_grad()
def train_accuracy(model: nn.Module, images, labels) -> float:
    model.eval()
    images = torch.as_tensor(images, dtype=torch.float32)
    labels = torch.as_tensor(labels, dtype=torch.long)
    preds = model(images).argmax(dim=1)
    return float((preds == labels).float().mean())
