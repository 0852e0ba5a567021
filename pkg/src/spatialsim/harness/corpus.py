"""Layer corpus: the evaluated CNN/GAN layers at desk scale, plus the
randomized geometry corpus used for functional validation.

Desk scaling keeps spatial dims, kernel size, and stride untouched (the
padding, shifting, and multicast behavior under test depends only on
those) and uniformly reduces channel/filter counts; profile fractions for
end-to-end estimates are illustrative, not measured.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..oracle import DILATED, DIRECT, TRANSPOSED, LayerSpec


@dataclass(frozen=True)
class CorpusEntry:
    layer: LayerSpec
    expansion: int = 1       # padfree expansion knob for small PE sets
    note: str = ""


def _tconv(name, err_side, k, stride, channels=1, filters=1):
    return LayerSpec(name, TRANSPOSED, err_side, err_side, k, stride,
                     channels=channels, num_filters=filters)


def _dilated(name, in_h, in_w, k, stride, channels=1, filters=1, expansion=1):
    return LayerSpec(name, DILATED, in_h, in_w, k, stride,
                     channels=channels, num_filters=filters)


# Backward-pass workloads of the evaluated CNN layers, channel counts desk
# scaled to 1. Error-map sides equal the forward output sides; input
# gradients are transposed convolutions over the error map, filter
# gradients dilated convolutions over the forward input.
CNN_LAYERS = {
    # AlexNet CONV1: 224x224 input, 11x11, stride 4, errors 55x55
    "alexnet-conv1-igrad": CorpusEntry(_tconv("alexnet-conv1-igrad", 55, 11, 4)),
    "alexnet-conv1-fgrad": CorpusEntry(
        LayerSpec("alexnet-conv1-fgrad", DILATED, 224, 224, 11, 4), expansion=1
    ),
    # AlexNet CONV2: 31x31 input, 5x5, stride 1, errors 27x27
    "alexnet-conv2-igrad": CorpusEntry(_tconv("alexnet-conv2-igrad", 27, 5, 1)),
    # ResNet-50 CONV3: 57x57 input, 3x3, stride 2, errors 28x28
    "resnet50-conv3-igrad": CorpusEntry(_tconv("resnet50-conv3-igrad", 28, 3, 2)),
    "resnet50-conv3-fgrad": CorpusEntry(
        LayerSpec("resnet50-conv3-fgrad", DILATED, 57, 57, 3, 2), expansion=4
    ),
    # ShuffleNet CONV2: 57x57, 3x3, stride 2, errors 28x28
    "shufflenet-conv2-igrad": CorpusEntry(_tconv("shufflenet-conv2-igrad", 28, 3, 2)),
    # Inception CONV3: 17x17, 3x3, stride 2, errors 8x8
    "inception-conv3-igrad": CorpusEntry(_tconv("inception-conv3-igrad", 8, 3, 2)),
    "inception-conv3-fgrad": CorpusEntry(
        LayerSpec("inception-conv3-fgrad", DILATED, 17, 17, 3, 2), expansion=4
    ),
    # Xception CONV3: 29x29, 3x3, stride 2, errors 14x14
    "xception-conv3-igrad": CorpusEntry(_tconv("xception-conv3-igrad", 14, 3, 2)),
    # MobileNet CONV5: 15x15, 3x3, stride 2, errors 7x7
    "mobilenet-conv5-igrad": CorpusEntry(_tconv("mobilenet-conv5-igrad", 7, 3, 2)),
}

# GAN layers: discriminators are regular convolutions (their backward pass
# is evaluated); generators upsample with transposed convolutions in the
# forward direction.
GAN_LAYERS = {
    # CycleGAN discriminator CONV3: 114x114, 4x4, stride 2, errors 56x56
    "cyclegan-disc-conv3-igrad": CorpusEntry(
        _tconv("cyclegan-disc-conv3-igrad", 56, 4, 2)
    ),
    # CycleGAN generator TCONV1: 56x56 -> 113x113, 3x3, stride 2
    "cyclegan-gen-tconv1-fwd": CorpusEntry(
        _tconv("cyclegan-gen-tconv1-fwd", 56, 3, 2)
    ),
    # pix2pix discriminator CONV6: 130x130, 4x4, stride 2, errors 64x64
    "pix2pix-disc-conv6-igrad": CorpusEntry(
        _tconv("pix2pix-disc-conv6-igrad", 64, 4, 2)
    ),
    # pix2pix generator TCONV41: 64x64 -> 130x130, 4x4, stride 2
    "pix2pix-gen-tconv41-fwd": CorpusEntry(
        _tconv("pix2pix-gen-tconv41-fwd", 64, 4, 2)
    ),
}

ALL_LAYERS = {**CNN_LAYERS, **GAN_LAYERS}

# small layers exercising every dataflow quickly
SMOKE_LAYERS = {
    "upsample2x-3x3": CorpusEntry(_tconv("upsample2x-3x3", 2, 3, 2)),
    "grad-5x4": CorpusEntry(
        LayerSpec("grad-5x4", DILATED, 5, 4, 3, 2, err_h=2, err_w=2)
    ),
    "direct-4x4": CorpusEntry(LayerSpec("direct-4x4", DIRECT, 4, 4, 2, 2)),
}


def stride2_transposed_layers():
    return [
        e.layer for e in ALL_LAYERS.values()
        if e.layer.conv_type == TRANSPOSED and e.layer.stride == 2
    ]


def get_entry(name: str) -> CorpusEntry:
    table = {**ALL_LAYERS, **SMOKE_LAYERS}
    if name not in table:
        raise KeyError(
            f"unknown layer {name!r}; known: {', '.join(sorted(table))}"
        )
    return table[name]


def random_corpus(count: int = 51, seed: int = 2024,
                  max_k: int = 7, max_stride: int = 4, max_n: int = 16,
                  max_channels: int = 4):
    """Randomized desk-scale layers across the three convolution types.

    Sizes are biased small so the full sweep stays in the minutes range,
    with occasional draws at the bounds.
    """
    rng = np.random.default_rng(seed)
    entries = []
    types = [TRANSPOSED, DILATED, DIRECT]
    i = 0
    while len(entries) < count:
        conv_type = types[len(entries) % 3]
        big = rng.random() < 0.15
        hi = max_n if big else 9
        k = int(rng.integers(1, max_k + 1))
        s = int(rng.integers(1, max_stride + 1))
        ch = int(rng.integers(1, max_channels + 1))
        f = int(rng.integers(1, max_channels + 1))
        batch = 1
        try:
            if conv_type == TRANSPOSED:
                nh = int(rng.integers(1, hi + 1))
                nw = int(rng.integers(1, hi + 1))
                layer = LayerSpec(f"rand-t{i}", TRANSPOSED, nh, nw, k, s,
                                  channels=ch, num_filters=f, batch=batch)
            elif conv_type == DILATED:
                # keep the error map derivable and non-trivial
                eh = int(rng.integers(1, 5))
                ew = int(rng.integers(1, 5))
                nh = k + s * (eh - 1) + int(rng.integers(0, s))
                nw = k + s * (ew - 1) + int(rng.integers(0, s))
                if nh > max_n or nw > max_n:
                    i += 1
                    continue
                layer = LayerSpec(f"rand-d{i}", DILATED, nh, nw, k, s,
                                  channels=ch, num_filters=f, batch=batch)
            else:
                nh = int(rng.integers(k, hi + 1))
                nw = int(rng.integers(k, hi + 1))
                layer = LayerSpec(f"rand-c{i}", DIRECT, nh, nw, k, s,
                                  channels=ch, num_filters=f, batch=batch)
        except Exception:
            i += 1
            continue
        entries.append(CorpusEntry(layer))
        i += 1
    return entries
