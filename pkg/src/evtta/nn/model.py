"""Sequential model container, parameter tagging and checkpoints."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .layers import (
    BN,
    BatchNorm,
    Conv2d,
    Dense,
    GaussianHead,
    GlobalAvgPool,
    Layer,
    MaxPool,
    Parameter,
    ReLU,
    SoftmaxHead,
    layer_from_spec,
)

CHECKPOINT_FORMAT = "evtta-checkpoint/1"


class ShapeError(ValueError):
    pass


class Model:
    """An ordered layer list ending in a softmax or Gaussian head."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int]):
        self.layers = list(layers)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.mode = "train"
        self._has_forward = False

    # mode ----------------------------------------------------------------

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    @property
    def head(self) -> str:
        return "gaussian" if isinstance(self.layers[-1], GaussianHead) else "softmax"

    @property
    def num_outputs(self) -> int:
        last = self.layers[-1]
        return last.num_classes if isinstance(last, SoftmaxHead) else 2

    # parameters ----------------------------------------------------------

    def named_parameters(self, subset: str = "all") -> dict[str, Parameter]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                if subset == "all" or (subset == "bn" and p.tag == BN):
                    out[f"layers.{i}.{name}"] = p
        if subset not in ("all", "bn"):
            raise ValueError(f"unknown parameter subset {subset!r}")
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {f"layers.{i}.{n}": b for i, layer in enumerate(self.layers) for n, b in layer.buffers().items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: p.value.copy() for k, p in self.named_parameters().items()}
        state.update({k: b.copy() for k, b in self.named_buffers().items()})
        return state

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad[...] = 0.0

    def copy(self) -> "Model":
        clone = copy.deepcopy(self)
        clone.clear_cache()
        return clone

    def clear_cache(self):
        for layer in self.layers:
            layer.clear_cache()
        self._has_forward = False

    # passes --------------------------------------------------------------

    def forward(self, x, update_stats: bool = True) -> np.ndarray:
        """Run the batch through every layer.

        Returns class probabilities ``(N, C)`` or ``(N, 2)`` columns
        ``(mu, sigma)``. ``update_stats=False`` keeps BatchNorm running
        estimates untouched in train mode.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != self.input_shape or x.shape[0] < 1:
            raise ShapeError(f"expected input of shape (N>=1, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        train = self.mode == "train"
        for layer in self.layers:
            x = layer.forward(x, train, update_stats)
        self._has_forward = True
        return x

    def backward(self, loss_grad) -> dict[str, np.ndarray]:
        """Backpropagate ``d loss / d outputs``; returns fresh parameter gradients."""
        if not self._has_forward:
            raise RuntimeError("backward called without a preceding forward pass")
        self.zero_grad()
        g = np.asarray(loss_grad, dtype=np.float64)
        self.layers[0].needs_input_grad = False
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return {k: p.grad.copy() for k, p in self.named_parameters().items()}

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        """Outputs in the current mode without touching running statistics."""
        outs = [self.forward(x[i:i + batch_size], update_stats=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs)

    # checkpoints ---------------------------------------------------------

    def manifest(self) -> dict:
        tensors, offset = [], 0
        for name, arr, tag in self._tensors():
            tensors.append({"name": name, "shape": list(arr.shape), "tag": tag, "offset": offset})
            offset += arr.size
        return {"format": CHECKPOINT_FORMAT, "input_shape": list(self.input_shape),
                "layers": [layer.spec() for layer in self.layers], "tensors": tensors}

    def _tensors(self):
        for name, p in self.named_parameters().items():
            yield name, p.value, p.tag
        for name, b in self.named_buffers().items():
            yield name, b, "buffer"

    def save(self, path) -> tuple[Path, Path]:
        """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian f64)."""
        path = Path(path)
        manifest_path, blob_path = path.with_suffix(".json"), path.with_suffix(".bin")
        manifest = self.manifest()
        manifest["blob"] = blob_path.name
        blob = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr, _ in self._tensors())
        manifest_path.write_text(json.dumps(manifest, indent=2))
        blob_path.write_bytes(blob)
        return manifest_path, blob_path

    @classmethod
    def load(cls, path) -> "Model":
        path = Path(path)
        manifest_path = path.with_suffix(".json")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{manifest_path}: unsupported checkpoint format {manifest.get('format')!r}")
        blob = np.frombuffer((manifest_path.parent / manifest["blob"]).read_bytes(), dtype="<f8")
        model = cls([layer_from_spec(s) for s in manifest["layers"]], manifest["input_shape"])
        params, buffers = model.named_parameters(), model.named_buffers()
        for t in manifest["tensors"]:
            n = int(np.prod(t["shape"], dtype=np.int64))
            arr = blob[t["offset"]:t["offset"] + n].reshape(t["shape"])
            target = params[t["name"]].value if t["name"] in params else buffers[t["name"]]
            if target.shape != arr.shape:
                raise ShapeError(f"{t['name']}: checkpoint shape {arr.shape} != model shape {target.shape}")
            target[...] = arr
        model.eval()
        return model


def _backbone(in_channels, widths, rng):
    layers, c = [], in_channels
    for w in widths:
        layers += [Conv2d(c, w, 3, 1, rng), BatchNorm(w), ReLU(), MaxPool()]
        c = w
    layers.append(GlobalAvgPool())
    return layers, c


def build_classifier(num_classes: int, resolution=(32, 32), in_channels: int = 2,
                     widths=(16, 32), seed=0) -> Model:
    """Conv-BN-ReLU-Pool stages, global average pooling and a dense softmax head."""
    rng = np.random.default_rng(seed)
    layers, c = _backbone(in_channels, widths, rng)
    layers += [Dense(c, num_classes, rng), SoftmaxHead(num_classes)]
    return Model(layers, (*resolution, in_channels))


def build_regressor(resolution=(32, 32), in_channels: int = 2, widths=(16, 32), seed=0) -> Model:
    rng = np.random.default_rng(seed)
    layers, c = _backbone(in_channels, widths, rng)
    layers += [Dense(c, 2, rng), GaussianHead()]
    return Model(layers, (*resolution, in_channels))


def bn_layers(model: Model) -> list[BatchNorm]:
    return [layer for layer in model.layers if isinstance(layer, BatchNorm)]
