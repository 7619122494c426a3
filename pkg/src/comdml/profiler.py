"""Split-point profiling from a declared layered model.

Relative slow/fast compute fractions and intermediate data sizes are
derived analytically from per-layer costs instead of timed batches, so the
tables are deterministic and hardware independent.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from comdml.core import SLOW_FRAC_CAP, SplitProfile
from comdml.errors import InvalidModel, OutOfRange

FLOAT_BYTES = 4


@dataclass(frozen=True)
class LayerSpec:
    name: str
    cost: float  # relative forward+backward cost per batch
    out_bytes: float = 0.0  # activation bytes per batch
    param_bytes: float = 0.0

    def __post_init__(self):
        if self.cost < 0 or self.out_bytes < 0 or self.param_bytes < 0:
            raise InvalidModel(f"layer {self.name!r}: cost and sizes must be >= 0")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)
    aux_cost_frac: float = 0.0
    aux_out_classes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 2:
            raise InvalidModel(f"need at least 2 layers to split, got {len(self.layers)}")
        if not self.total_cost > 0:
            raise InvalidModel("total layer cost must be > 0")
        if self.aux_cost_frac < 0:
            raise InvalidModel("aux_cost_frac must be >= 0")

    @property
    def total_cost(self) -> float:
        return sum(layer.cost for layer in self.layers)

    @property
    def param_bytes(self) -> float:
        return sum(layer.param_bytes for layer in self.layers)

    @property
    def num_splits(self) -> int:
        return len(self.layers) - 1


def offloaded_model_bytes(model: ModelSpec, m: int) -> float:
    """Parameter bytes of layers m+1..L, i.e. the partial model a helper receives."""
    if not 1 <= m < len(model.layers):
        raise OutOfRange(f"split {m} outside 1..{len(model.layers) - 1}")
    return float(sum(layer.param_bytes for layer in model.layers[m:]))


def profile_splits(model: ModelSpec, label_bytes: float = 0.0) -> list[SplitProfile]:
    """One SplitProfile per split point m = 1..L-1 (split after layer m).

    ``label_bytes`` is added to every intermediate transfer for setups that
    ship labels alongside activations.
    """
    if len(model.layers) < 2:
        raise InvalidModel("need at least 2 layers to split")
    total = model.total_cost
    out = []
    prefix = 0.0
    for m in range(1, len(model.layers)):
        prefix += model.layers[m - 1].cost
        share = prefix / total
        slow = share + model.aux_cost_frac
        # 1 - share keeps share + fast == 1.0 exactly
        fast = 1.0 - share
        if not (0 < slow <= SLOW_FRAC_CAP and 0 < fast <= 1):
            raise InvalidModel(
                f"split {m}: fractions slow={slow:.4g} fast={fast:.4g} out of range "
                "(zero-cost prefix/suffix or aux head too large)"
            )
        out.append(
            SplitProfile(
                split_id=m,
                slow_frac=slow,
                fast_frac=fast,
                interm_bytes=float(model.layers[m - 1].out_bytes) + label_bytes,
                offload_bytes=offloaded_model_bytes(model, m),
            )
        )
    return out


def resnet56_like(aux_cost_frac: float = 0.02, num_classes: int = 10) -> ModelSpec:
    """Three stages of nine residual blocks with equal per-block cost.

    Activation sizes follow the feature-map shapes of a CIFAR ResNet-56
    (16x32x32, 32x16x16, 64x8x8 floats); parameters are two 3x3 convs per
    block. Gives 26 split points.
    """
    layers = []
    for stage, (ch, hw) in enumerate([(16, 32), (32, 16), (64, 8)], start=1):
        for block in range(1, 10):
            layers.append(
                LayerSpec(
                    name=f"stage{stage}.block{block}",
                    cost=1.0,
                    out_bytes=ch * hw * hw * FLOAT_BYTES,
                    param_bytes=2 * 9 * ch * ch * FLOAT_BYTES,
                )
            )
    return ModelSpec(layers=tuple(layers), aux_cost_frac=aux_cost_frac, aux_out_classes=num_classes)


PRESETS = {"resnet56-like": resnet56_like}
