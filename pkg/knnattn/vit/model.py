#!/usr/bin/env python

import numpy as np

from knnattn.diagnostics.trace import AttentionTrace
from knnattn.diagnostics.trace import LayerTrace
from knnattn.numerics.matrix import check_finite
from knnattn.numerics.matrix import row_sum
from knnattn.utils.exceptions import ShapeError
from knnattn.vit.layers import INIT_STD
from knnattn.vit.layers import Block
from knnattn.vit.layers import LayerNorm
from knnattn.vit.layers import Linear
from knnattn.vit.layers import Module


class VisionTransformer(Module):
    """
    Linear patch embedding, optional CLS token, learned position embedding, depth pre-norm blocks, final norm, CLS or
    average pooling and a linear classification head.
    """
    def __init__(self, cfg, rng):
        super(VisionTransformer, self).__init__()
        self.cfg = cfg

        self.patch_embed = self.add_module("patch_embed", Linear(cfg.input_dim, cfg.d_m, rng))
        if cfg.pooling == "cls":
            self.add_param("cls_token", rng.truncated_normal((1, 1, cfg.d_m), std=INIT_STD))
        self.add_param("pos_embed", rng.truncated_normal((1, cfg.n_tokens, cfg.d_m), std=INIT_STD))

        self.blocks = list()
        for l in range(cfg.depth):
            self.blocks.append(self.add_module("blocks.{l}".format(l=l), Block(cfg, rng)))

        self.norm = self.add_module("norm", LayerNorm(cfg.d_m))
        self.head = self.add_module("head", Linear(cfg.d_m, cfg.classes, rng))
        self._cache = None

    def __str__(self):
        return "VisionTransformer: {cfg}; {num} parameters".format(cfg=self.cfg, num=self.num_parameters())

    @property
    def cls_present(self):
        return self.cfg.pooling == "cls"

    def parameters(self):
        return list(self.named_parameters())

    def gradients(self):
        return list(self.named_gradients())

    def num_parameters(self):
        return int(sum(value.size for _, value in self.named_parameters()))

    def _compute_output(self, input):
        images = np.asarray(input, dtype=np.float64)
        if images.ndim != 3 or images.shape[1:] != (self.cfg.num_patches, self.cfg.input_dim):
            raise ShapeError("model input", images.shape, (self.cfg.num_patches, self.cfg.input_dim))

        tokens = self.patch_embed.forward(images)
        if self.cls_present:
            cls = np.broadcast_to(self.params["cls_token"], (images.shape[0], 1, self.cfg.d_m))
            tokens = np.concatenate([cls, tokens], axis=1)
        tokens = tokens + self.params["pos_embed"]

        block_inputs = list()
        for block in self.blocks:
            block_inputs.append(tokens)
            tokens = block.forward(tokens)

        normed = self.norm.forward(tokens)
        if self.cls_present:
            pooled = normed[:, 0]
        else:
            pooled = row_sum(np.swapaxes(normed, 1, 2)) / normed.shape[1]

        self._cache = {"block_inputs": block_inputs, "tokens": tokens, "normed": normed, "pooled": pooled}
        return self.head.forward(pooled)

    def _compute_input_grad(self, input, output_grad):
        cache = self._cache
        grad_pooled = self.head.backward(cache["pooled"], output_grad)

        grad_normed = np.zeros(cache["normed"].shape, dtype=np.float64)
        if self.cls_present:
            grad_normed[:, 0] = grad_pooled
        else:
            grad_normed[:] = grad_pooled[:, None, :] / cache["normed"].shape[1]

        grad = self.norm.backward(cache["tokens"], grad_normed)
        for block, block_input in reversed(list(zip(self.blocks, cache["block_inputs"]))):
            grad = block.backward(block_input, grad)

        self.grads["pos_embed"] += np.sum(grad, axis=0, keepdims=True)
        if self.cls_present:
            self.grads["cls_token"] += np.sum(grad[:, :1], axis=0, keepdims=True)
            grad = grad[:, 1:]

        return self.patch_embed.backward(np.asarray(input, dtype=np.float64), grad)

    def selection_margin(self):
        return min(block.attn.selection_margin() for block in self.blocks)


def build_model(cfg, rng):
    """
    Parameters are drawn in construction order from rng: weights truncated normal with std 0.02, biases zero,
    normalization gains one.
    """
    return VisionTransformer(cfg, rng)


def cross_entropy(logits, labels):
    """
    Mean softmax cross-entropy.
    :return: (loss, per-sample losses, dL/dlogits)
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross entropy", logits.shape, labels.shape)
    check_finite(logits, "logits")

    shifted = logits - np.max(logits, axis=1, keepdims=True)
    exps = np.exp(shifted)
    totals = row_sum(exps)
    log_probs = shifted - np.log(totals)[:, None]

    rows = np.arange(logits.shape[0])
    losses = -log_probs[rows, labels]
    loss = float(row_sum(losses[None, :])[0]) / logits.shape[0]

    grad = exps / totals[:, None]
    grad[rows, labels] -= 1.0
    return loss, losses, grad / logits.shape[0]


def loss_and_backward(model, images, labels):
    """
    Forward pass, cross-entropy and backward pass. Gradients are added to the ones already accumulated.
    :return: (loss, logits)
    """
    logits = model.forward(images)
    loss, _, grad = cross_entropy(logits, labels)
    model.backward(images, grad)
    return loss, logits


def capture_trace(model, batch):
    """
    One forward pass over the first image of the batch, recording per block the entering tokens, the attention maps
    of all heads and both residual branches.
    """
    images = np.asarray(batch, dtype=np.float64)[:1]
    model.forward(images)

    layers = list()
    for block, block_input in zip(model.blocks, model._cache["block_inputs"]):
        layers.append(LayerTrace(
            tokens=block_input[0],
            attention=block.attn.attention[0],
            attn_branch=block.cache["attn_branch"][0],
            ffn_input=block.cache["hidden"][0],
            ffn_branch=block.cache["ffn_branch"][0],
        ))

    return AttentionTrace(layers, model.cfg.grid, cls_present=model.cls_present)
