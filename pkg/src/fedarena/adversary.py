"""Attack behaviours applied to a participant's data or uploaded delta."""
import math
from dataclasses import dataclass

import numpy as np

KINDS = ("honest", "label_flip", "rescale", "sign_randomize", "value_invert", "free_rider")
INVERT_MODES = ("reciprocal", "negate")
DELTA_ATTACKS = ("rescale", "sign_randomize", "value_invert", "free_rider")


@dataclass(frozen=True)
class AdversarySpec:
    kind: str = "honest"
    src_class: int = 1
    dst_class: int = 7
    factor: float = -100.0
    prob: float = 0.5
    seed: int = 0
    mode: str = "reciprocal"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown adversary kind {self.kind!r}")
        if self.kind == "rescale" and self.factor == 0:
            raise ValueError("rescale factor must be nonzero")
        if self.kind == "value_invert" and not 0 < self.prob <= 1:
            raise ValueError("value_invert prob must be in (0, 1]")
        if self.kind == "value_invert" and self.mode not in INVERT_MODES:
            raise ValueError(f"value_invert mode must be one of {INVERT_MODES}")
        if self.kind == "label_flip" and self.src_class == self.dst_class:
            raise ValueError("label_flip needs src_class != dst_class")

    @property
    def is_honest(self):
        return self.kind == "honest"

    def with_seed(self, seed):
        return AdversarySpec(self.kind, self.src_class, self.dst_class, self.factor, self.prob, seed,
                             self.mode)


HONEST = AdversarySpec()


def adversary_count(honest, fraction):
    """Extra adversaries for a fraction of the honest count, rounded up."""
    # tolerate float noise such as 0.2 * 10 == 2.0000000000000004
    return int(math.ceil(round(fraction * honest, 9)))


def poison_labels(shard, src, dst):
    labels = np.array(shard.labels, copy=True)
    labels[labels == src] = dst
    return shard.with_labels(labels)


def _round_rng(spec, round_):
    return np.random.default_rng(np.random.SeedSequence([int(spec.seed), int(round_), 0xADD]))


def corrupt_delta(delta, spec, round_):
    """Transform an honest delta into what the adversary uploads this round."""
    delta = np.asarray(delta, dtype=np.float64)
    if spec.kind in ("honest", "label_flip"):
        return delta.copy()
    if spec.kind == "rescale":
        return spec.factor * delta
    rng = _round_rng(spec, round_)
    if spec.kind == "sign_randomize":
        signs = np.where(rng.random(delta.size) < 0.5, -1.0, 1.0)
        return np.abs(delta) * signs
    if spec.kind == "value_invert":
        flip = rng.random(delta.size) < spec.prob
        if spec.mode == "negate":
            return np.where(flip, -delta, delta)
        # reciprocals of tiny coordinates are huge outliers and exact zeros
        # invert to +-inf, as plain IEEE division would give
        out = delta.copy()
        with np.errstate(divide="ignore"):
            out[flip] = 1.0 / delta[flip]
        return out
    if spec.kind == "free_rider":
        return rng.uniform(-1.0, 1.0, size=delta.size)
    raise ValueError(spec.kind)
