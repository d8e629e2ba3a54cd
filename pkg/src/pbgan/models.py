"""Desk-scale encoder-decoder generator and patch discriminator.

The generator is a small UNet: three stride-2 convolutions down, three
stride-2 transposed convolutions up with skip concatenations from the
mirrored encoder layers, and a task-specific 3x3 head with a tanh output.
Shared layers resolve their filters through the filter bank; the head and
the discriminator are plain per-task layers.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .piggyback import compose_filters, compose_filters_node


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "deconv"
    kw: int
    kh: int
    c_in: int
    c_out: int
    stride: int
    pad: int
    activation: str  # "relu" | "leaky_relu" | "tanh" | "none"
    normalization: str  # "none" | "instance"
    task_specific: bool = False
    skip_from: int | None = None


@dataclass(frozen=True)
class ModelSpec:
    name: str
    image_size: int
    image_channels: int
    gen_layers: tuple = field(default_factory=tuple)
    disc_layers: tuple = field(default_factory=tuple)

    @property
    def shared_layers(self):
        return [(i, l) for i, l in enumerate(self.gen_layers) if not l.task_specific]


def reference_spec(size=32):
    """The 32x32 reference architecture (the only supported size)."""
    if size != 32:
        raise ModelError(f"unsupported size {size}")
    gen = (
        # first encoder layer carries no norm so exact color statistics can
        # reach the decoder through its skip link
        LayerSpec("conv", 4, 4, 3, 16, 2, 1, "leaky_relu", "none"),
        LayerSpec("conv", 4, 4, 16, 32, 2, 1, "leaky_relu", "instance"),
        LayerSpec("conv", 4, 4, 32, 64, 2, 1, "leaky_relu", "instance"),
        LayerSpec("deconv", 4, 4, 64, 32, 2, 1, "relu", "instance"),
        LayerSpec("deconv", 4, 4, 64, 16, 2, 1, "relu", "instance", skip_from=1),
        LayerSpec("deconv", 4, 4, 32, 3, 2, 1, "relu", "instance", skip_from=0),
        LayerSpec("conv", 3, 3, 3, 3, 1, 1, "tanh", "none", task_specific=True),
    )
    disc = (
        LayerSpec("conv", 4, 4, 6, 16, 2, 1, "leaky_relu", "none"),
        LayerSpec("conv", 4, 4, 16, 32, 2, 1, "leaky_relu", "instance"),
        LayerSpec("conv", 3, 3, 32, 1, 1, 1, "none", "none"),
    )
    return ModelSpec(name="small-unet", image_size=32, image_channels=3,
                     gen_layers=gen, disc_layers=disc)


_ACTIVATIONS = {
    "relu": ad.relu,
    "leaky_relu": lambda t: ad.leaky_relu(t, 0.2),
    "tanh": ad.tanh,
    "none": lambda t: t,
}


def _stack_forward(layers, params, x, norm_enabled=True):
    """Run a conv/deconv stack; params is a list of (filters, bias) Tensors."""
    outputs = []
    for idx, lay in enumerate(layers):
        if lay.skip_from is not None:
            x = ad.concat_last_axis([x, outputs[lay.skip_from]])
        f, b = params[idx]
        if lay.kind == "conv":
            x = ad.conv2d(x, f, b, lay.stride, lay.pad)
        elif lay.kind == "deconv":
            x = ad.deconv2d(x, f, b, lay.stride, lay.pad)
        else:
            raise ModelError(f"unknown layer kind {lay.kind!r}")
        if norm_enabled and lay.normalization == "instance":
            x = ad.instance_norm(x)
        x = _ACTIVATIONS[lay.activation](x)
        outputs.append(x)
    return x


class GeneratorInstance:
    """A generator with fully resolved (numpy) filters for one task."""

    def __init__(self, spec, task_index, layer_params, norm_enabled=True):
        self.spec = spec
        self.task_index = task_index
        self.layer_params = [(np.asarray(f), np.asarray(b)) for f, b in layer_params]
        self.norm_enabled = norm_enabled
        for lay, (f, b) in zip(spec.gen_layers, self.layer_params):
            if f.shape != (lay.kw, lay.kh, lay.c_in, lay.c_out):
                raise ModelError(
                    f"resolved filter shape {f.shape} does not match layer spec {lay}"
                )


def build_generator(run, task_index):
    """Resolve a task's generator from a run's bank and stored parameters."""
    if task_index < 1 or task_index > len(run.tasks):
        raise ModelError(f"task {task_index} not trained in this run")
    spec = run.spec
    record = run.tasks[task_index - 1]

    layer_params = []
    if run.mode in ("piggyback", "pure_factorization"):
        shared_pos = 0
        for idx, lay in enumerate(spec.gen_layers):
            if lay.task_specific:
                f = record.params[f"g/L{idx}/filters"]
                b = record.params[f"g/L{idx}/bias"]
            else:
                bank = run.banks[shared_pos]
                from .piggyback import TaskLayerParams

                tlp = TaskLayerParams(
                    task_index=task_index,
                    unconstrained=record.params[f"g/L{idx}/unc"],
                    W=record.params.get(f"g/L{idx}/W"),
                    bias=record.params[f"g/L{idx}/bias"],
                    trained_bank_width=record.trained_widths[shared_pos],
                )
                f = compose_filters(bank, tlp)
                b = tlp.bias
                shared_pos += 1
            layer_params.append((f, b))
    elif run.mode == "full":
        for idx in range(len(spec.gen_layers)):
            layer_params.append(
                (record.params[f"g/L{idx}/filters"], record.params[f"g/L{idx}/bias"])
            )
    elif run.mode == "sequential_finetune":
        for idx in range(len(spec.gen_layers)):
            layer_params.append(
                (run.sft_params[f"g/L{idx}/filters"], run.sft_params[f"g/L{idx}/bias"])
            )
    else:
        raise ModelError(f"run has no trained mode ({run.mode!r})")
    return GeneratorInstance(spec, task_index, layer_params)


def generate(g, image):
    """Deterministic inference: condition image in [-1,1] to output in [-1,1]."""
    image = np.asarray(image, dtype=np.float64)
    s, c = g.spec.image_size, g.spec.image_channels
    if image.shape != (s, s, c):
        raise ModelError(f"input extents {image.shape} != ({s},{s},{c})")
    params = [(ad.Tensor(f), ad.Tensor(b)) for f, b in g.layer_params]
    out = _stack_forward(g.spec.gen_layers, params, ad.Tensor(image), g.norm_enabled)
    return out.data


def generator_forward_node(spec, param_tensors, image_tensor):
    """Training-path forward: param_tensors holds (filters, bias) graph nodes."""
    return _stack_forward(spec.gen_layers, param_tensors, image_tensor)


def discriminator_forward_node(spec, param_tensors, cond, img):
    """Patch scores for (condition, candidate) pairs; returns a 2D-ish map."""
    x = ad.concat_last_axis([cond, img])
    return _stack_forward(spec.disc_layers, param_tensors, x)


def resolve_shared_filter_nodes(spec, banks, record_params, trained_widths):
    """Per-generator-layer (filters, bias) Tensors for the piggyback path.

    Unconstrained blocks, W matrices, biases, and task-specific layers
    become leaves keyed by the standard parameter names; shared filters
    are composed in-graph against the frozen bank prefix.
    """
    leaves = {}
    tensors = []
    shared_pos = 0
    for idx, lay in enumerate(spec.gen_layers):
        bias = ad.Tensor(record_params[f"g/L{idx}/bias"], requires_grad=True)
        leaves[f"g/L{idx}/bias"] = bias
        if lay.task_specific:
            f = ad.Tensor(record_params[f"g/L{idx}/filters"], requires_grad=True)
            leaves[f"g/L{idx}/filters"] = f
        else:
            unc = ad.Tensor(record_params[f"g/L{idx}/unc"], requires_grad=True)
            leaves[f"g/L{idx}/unc"] = unc
            W = None
            if f"g/L{idx}/W" in record_params:
                W = ad.Tensor(record_params[f"g/L{idx}/W"], requires_grad=True)
                leaves[f"g/L{idx}/W"] = W
            f = compose_filters_node(banks[shared_pos], unc, W, trained_widths[shared_pos])
            shared_pos += 1
        tensors.append((f, bias))
    return tensors, leaves
