"""Network definitions: the student (EMNet) and teacher wrappers.

The student has five convolution stages with 64/128/256/512/512 output
channels, 3x3 filters, 3x3 max pooling with stride 2 after every stage, a
1x1 convolution matching the teacher's feature dimensionality, and exactly
one fully-connected layer (width 256 for multi-class tasks, 128 for binary
ones) before the classification head.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

CONV_CHANNELS = (64, 128, 256, 512, 512)
FC_WIDTH_MULTICLASS = 256
FC_WIDTH_BINARY = 128


@dataclass(frozen=True)
class EmnetSpec:
    num_classes: int
    fc_width: int = None
    match_dim: int = 512
    dropout: float = 0.5

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.fc_width is None:
            width = FC_WIDTH_BINARY if self.num_classes == 2 else FC_WIDTH_MULTICLASS
            object.__setattr__(self, "fc_width", width)
        if self.fc_width not in (FC_WIDTH_BINARY, FC_WIDTH_MULTICLASS):
            raise ValueError(
                f"fully-connected width must be {FC_WIDTH_BINARY} or {FC_WIDTH_MULTICLASS}, "
                f"got {self.fc_width}"
            )
        if self.match_dim < 1:
            raise ValueError("match_dim must be positive")


def _stage(c_in, c_out):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel_size=3, padding=1),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(kernel_size=3, stride=2, padding=1),
    )


def _init_convs_for_relu(module: nn.Module):
    # keeps activation scale roughly constant through the deep ReLU stack
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class Emnet(nn.Module):
    """Student network.  ``convs`` maps a 224x224 crop to the matched
    feature map (B, match_dim, 7, 7); conv-layer activations are tappable
    by tag (conv1..conv5, taken after the stage's ReLU, before its pool)."""

    def __init__(self, spec: EmnetSpec):
        super().__init__()
        self.spec = spec
        channels = (3,) + CONV_CHANNELS
        self.stages = nn.ModuleList(
            _stage(channels[i], channels[i + 1]) for i in range(len(CONV_CHANNELS))
        )
        self.match = nn.Conv2d(CONV_CHANNELS[-1], spec.match_dim, kernel_size=1)
        self.fc = nn.Linear(spec.match_dim * 7 * 7, spec.fc_width)
        self.dropout = nn.Dropout(spec.dropout)
        self.head = nn.Linear(spec.fc_width, spec.num_classes)
        _init_convs_for_relu(self)

    def convs(self, x):
        for stage in self.stages:
            x = stage(x)
        return self.match(x)

    def forward(self, x):
        feats = self.convs(x)
        hidden = torch.relu(self.fc(feats.flatten(1)))
        return self.head(self.dropout(hidden))

    def feature_map(self, x, layer_tag="conv5"):
        """Per-frame activation of one conv layer (post-ReLU, pre-pool)."""
        if not layer_tag.startswith("conv"):
            raise ValueError(f"unknown layer tag {layer_tag!r}")
        index = int(layer_tag[4:]) - 1
        if not 0 <= index < len(self.stages):
            raise ValueError(f"unknown layer tag {layer_tag!r}")
        for stage in self.stages[:index]:
            x = stage(x)
        conv, relu, _pool = self.stages[index]
        return relu(conv(x))

    def conv_parameters(self):
        """The convolutional parameter set (stages plus the matching 1x1)."""
        for stage in self.stages:
            yield from stage.parameters()
        yield from self.match.parameters()

    def fully_connected_parameters(self):
        yield from self.fc.parameters()
        yield from self.head.parameters()

    def gaussian_init_head(self, std=0.01, generator=None):
        """Fresh Gaussian-initialised fully-connected layers for stage 2."""
        for layer in (self.fc, self.head):
            with torch.no_grad():
                layer.weight.normal_(0.0, std, generator=generator)
                layer.bias.zero_()


class TeacherModel(nn.Module):
    """A VGG-style backbone split into conv features (ending at its last
    pooling layer) and a classification head."""

    def __init__(self, features: nn.Module, feature_channels: int, feature_hw: int,
                 num_classes: int):
        super().__init__()
        self.features = features
        self.feature_channels = feature_channels
        self.feature_hw = feature_hw
        self.head = nn.Linear(feature_channels * feature_hw * feature_hw, num_classes)

    def forward(self, x):
        return self.head(self.features(x).flatten(1))

    @torch.no_grad()
    def feature_map(self, x):
        """Output of the last pooling layer before the classifier."""
        return self.features(x)

    def replace_head(self, num_classes: int):
        self.head = nn.Linear(self.head.in_features, num_classes)

    def freeze_bottom_stages(self, n_stages: int = 2):
        """Freeze everything up to and including the n-th pooling layer."""
        pools_seen = 0
        for module in self.features.modules():
            if pools_seen < n_stages:
                for p in module.parameters(recurse=False):
                    p.requires_grad_(False)
            if isinstance(module, (nn.MaxPool2d, nn.AvgPool2d, nn.AdaptiveMaxPool2d,
                                   nn.AdaptiveAvgPool2d)):
                pools_seen += 1

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


def build_vgg16_teacher(num_classes: int, weights_path=None) -> TeacherModel:
    """VGG-16-shaped teacher (the face-recognition backbone's layout); conv
    weights optionally loaded from a state-dict file."""
    from torchvision.models import vgg16

    backbone = vgg16(weights=None)
    _init_convs_for_relu(backbone.features)
    teacher = TeacherModel(backbone.features, feature_channels=512, feature_hw=7,
                           num_classes=num_classes)
    if weights_path is not None:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        teacher.features.load_state_dict(state, strict=False)
    return teacher


def build_surrogate_teacher(num_classes: int, channels=(8, 16), match_dim: int = 512,
                            feature_hw: int = 7) -> TeacherModel:
    """A small stand-in teacher for smoke runs and tests; it ends in an
    adaptive pool (the "last pooling before the classifier") so its feature
    map lines up with the student's matched output."""
    layers = []
    c_in = 3
    for c_out in channels:
        layers += [nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU(inplace=True),
                   nn.MaxPool2d(3, stride=2, padding=1)]
        c_in = c_out
    layers += [nn.Conv2d(c_in, match_dim, 1), nn.AdaptiveMaxPool2d(feature_hw)]
    features = nn.Sequential(*layers)
    _init_convs_for_relu(features)
    return TeacherModel(features, feature_channels=match_dim,
                        feature_hw=feature_hw, num_classes=num_classes)
