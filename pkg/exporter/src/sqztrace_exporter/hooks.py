"""Forward hooks that capture pre/post-attention hidden states per layer.

The "post" state is defined post-residual: B = A + attention_output,
where A is the hidden state entering the decoder layer.  This matches the
trace consumer's definition of "after the attention sublayer".

Per-architecture hook points (documented rather than guessed silently):

- llama/mistral style (``model.layers[i].self_attn``): sequential
  residual; B is exactly the stream after the attention residual add.
- gpt2 style (``transformer.h[i].attn``): same, sequential residual.
- gpt-neox (``gpt_neox.layers[i].attention``): when the config enables
  the parallel attention+MLP residual, B = A + attn is the attention
  contribution alone, not the full post-block stream.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn


class LayerHookError(RuntimeError):
    """Model has no recognizable decoder-layer / attention-sublayer boundary."""


_LAYER_PATHS = (
    ("model", "layers"),
    ("transformer", "h"),
    ("gpt_neox", "layers"),
    ("transformer", "blocks"),
)

_ATTENTION_ATTRS = ("self_attn", "attn", "attention")


def find_decoder_layers(model: nn.Module) -> list[nn.Module]:
    """Locate the decoder layer stack of a pretrained causal LM."""
    for path in _LAYER_PATHS:
        node = model
        for attr in path:
            node = getattr(node, attr, None)
            if node is None:
                break
        if isinstance(node, nn.ModuleList) and len(node) > 0:
            return list(node)
    # generic fallback: the first ModuleList whose members carry an attention submodule
    for module in model.modules():
        if isinstance(module, nn.ModuleList) and len(module) > 0:
            if all(_attention_submodule(layer) is not None for layer in module):
                return list(module)
    raise LayerHookError(
        f"{type(model).__name__}: could not locate a decoder layer list"
    )


def _attention_submodule(layer: nn.Module) -> nn.Module | None:
    for attr in _ATTENTION_ATTRS:
        candidate = getattr(layer, attr, None)
        if isinstance(candidate, nn.Module):
            return candidate
    return None


def attention_submodule(layer: nn.Module) -> nn.Module:
    found = _attention_submodule(layer)
    if found is None:
        raise LayerHookError(
            f"{type(layer).__name__}: no attention submodule among {_ATTENTION_ATTRS}"
        )
    return found


def capture_prefill(model: nn.Module, input_ids: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
    """One hooked forward pass; returns float32 (n_layer, T, d) pre/post stacks.

    Hidden states are cast to float32 regardless of model precision.
    """
    layers = find_decoder_layers(model)
    pre_states: list[torch.Tensor | None] = [None] * len(layers)
    attn_outputs: list[torch.Tensor | None] = [None] * len(layers)
    handles = []

    def make_pre_hook(index: int):
        def hook(module, args, kwargs):
            hidden = args[0] if args else kwargs.get("hidden_states")
            if hidden is None:
                raise LayerHookError(f"layer {index}: no hidden_states argument")
            pre_states[index] = hidden.detach()
        return hook

    def make_attn_hook(index: int):
        def hook(module, args, kwargs, output):
            out = output[0] if isinstance(output, tuple) else output
            attn_outputs[index] = out.detach()
        return hook

    try:
        for index, layer in enumerate(layers):
            handles.append(layer.register_forward_pre_hook(make_pre_hook(index), with_kwargs=True))
            handles.append(
                attention_submodule(layer).register_forward_hook(
                    make_attn_hook(index), with_kwargs=True
                )
            )
        with torch.no_grad():
            model(input_ids=input_ids)
    finally:
        for handle in handles:
            handle.remove()

    pre_list, post_list = [], []
    width = None
    for index, (a, attn) in enumerate(zip(pre_states, attn_outputs)):
        if a is None or attn is None:
            raise LayerHookError(f"layer {index}: hooks captured nothing")
        if a.shape != attn.shape:
            raise LayerHookError(
                f"layer {index}: attention output shape {tuple(attn.shape)} "
                f"does not match hidden state shape {tuple(a.shape)}"
            )
        if width is None:
            width = a.shape[-1]
        elif a.shape[-1] != width:
            raise LayerHookError(
                f"layer {index}: hidden width {a.shape[-1]} differs from layer 0 width {width}"
            )
        a32 = a.squeeze(0).float().cpu().numpy().astype(np.float32)
        b32 = (a + attn).squeeze(0).float().cpu().numpy().astype(np.float32)
        pre_list.append(a32)
        post_list.append(b32)
    return np.stack(pre_list), np.stack(post_list)
