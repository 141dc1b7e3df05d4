#!/usr/bin/env python

from collections import OrderedDict

import numpy as np

from knnattn.attention.gradients import attention_backward
from knnattn.attention.kernels import attention_scores
from knnattn.attention.kernels import dense_attention
from knnattn.attention.kernels import knn_attention_fast
from knnattn.attention.selection import selection_margin
from knnattn.numerics.matrix import matmul
from knnattn.numerics.matrix import row_sum
from knnattn.utils.exceptions import ShapeError

INIT_STD = 0.02
GELU_COEFF = np.sqrt(2.0 / np.pi)


class Module(object):
    """
    A block with a forward pass and its derivative.

        output = module.forward(input)
        input_grad = module.backward(input, output_grad)

    forward caches whatever the backward pass needs, so backward must follow the forward pass on the same input.
    Parameter gradients accumulate until zero_grad().
    """
    def __init__(self):
        self.params = OrderedDict()
        self.grads = OrderedDict()
        self.children = OrderedDict()
        self._output = None

    def forward(self, input):
        self._output = self._compute_output(input)
        return self._output

    def backward(self, input, output_grad):
        input_grad = self._compute_input_grad(input, output_grad)
        self._update_parameters_grad(input, output_grad)
        return input_grad

    def _compute_output(self, input):
        raise NotImplementedError

    def _compute_input_grad(self, input, output_grad):
        raise NotImplementedError

    def _update_parameters_grad(self, input, output_grad):
        pass

    def add_param(self, name, value):
        self.params[name] = np.ascontiguousarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def add_module(self, name, module):
        self.children[name] = module
        return module

    def named_parameters(self, prefix=""):
        for name, value in self.params.items():
            yield prefix + name, value
        for child_name, child in self.children.items():
            for name, value in child.named_parameters(prefix + child_name + "."):
                yield name, value

    def named_gradients(self, prefix=""):
        for name, value in self.grads.items():
            yield prefix + name, value
        for child_name, child in self.children.items():
            for name, value in child.named_gradients(prefix + child_name + "."):
                yield name, value

    def zero_grad(self):
        for _, grad in self.named_gradients():
            grad.fill(0.0)

    def __repr__(self):
        return type(self).__name__


def _flatten(x):
    return x.reshape(-1, x.shape[-1])


class Linear(Module):
    """
    y = x W + b over the last axis, W of shape (n_in, n_out).
    """
    def __init__(self, n_in, n_out, rng, bias=True):
        super(Linear, self).__init__()
        self.n_in = n_in
        self.n_out = n_out
        self.add_param("weight", rng.truncated_normal((n_in, n_out), std=INIT_STD))
        if bias:
            self.add_param("bias", np.zeros(n_out))

    def _compute_output(self, input):
        if input.shape[-1] != self.n_in:
            raise ShapeError("linear layer", input.shape, self.params["weight"].shape)
        output = matmul(input, self.params["weight"])
        if "bias" in self.params:
            output = output + self.params["bias"]
        return output

    def _compute_input_grad(self, input, output_grad):
        return matmul(output_grad, self.params["weight"].T)

    def _update_parameters_grad(self, input, output_grad):
        self.grads["weight"] += matmul(_flatten(input).T, _flatten(output_grad))
        if "bias" in self.params:
            self.grads["bias"] += np.sum(_flatten(output_grad), axis=0)

    def __repr__(self):
        return "Linear {n_in} -> {n_out}".format(n_in=self.n_in, n_out=self.n_out)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-6):
        super(LayerNorm, self).__init__()
        self.dim = dim
        self.eps = eps
        self.add_param("gamma", np.ones(dim))
        self.add_param("beta", np.zeros(dim))
        self._normalized = None
        self._inv_std = None

    def _compute_output(self, input):
        centered = input - (row_sum(input) / self.dim)[..., None]
        variance = row_sum(centered * centered) / self.dim
        self._inv_std = 1.0 / np.sqrt(variance + self.eps)[..., None]
        self._normalized = centered * self._inv_std
        return self._normalized * self.params["gamma"] + self.params["beta"]

    def _compute_input_grad(self, input, output_grad):
        grad_normalized = output_grad * self.params["gamma"]
        mean_grad = (row_sum(grad_normalized) / self.dim)[..., None]
        mean_projection = (row_sum(grad_normalized * self._normalized) / self.dim)[..., None]
        return self._inv_std * (grad_normalized - mean_grad - self._normalized * mean_projection)

    def _update_parameters_grad(self, input, output_grad):
        self.grads["gamma"] += np.sum(_flatten(output_grad * self._normalized), axis=0)
        self.grads["beta"] += np.sum(_flatten(output_grad), axis=0)


class GELU(Module):
    """
    tanh approximation 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    """
    def _compute_output(self, input):
        self._tanh = np.tanh(GELU_COEFF * (input + 0.044715 * input ** 3))
        return 0.5 * input * (1.0 + self._tanh)

    def _compute_input_grad(self, input, output_grad):
        inner_grad = GELU_COEFF * (1.0 + 3.0 * 0.044715 * input ** 2)
        local = 0.5 * (1.0 + self._tanh) + 0.5 * input * (1.0 - self._tanh ** 2) * inner_grad
        return output_grad * local


class MLP(Module):
    def __init__(self, dim, hidden_dim, rng):
        super(MLP, self).__init__()
        self.fc1 = self.add_module("fc1", Linear(dim, hidden_dim, rng))
        self.act = self.add_module("act", GELU())
        self.fc2 = self.add_module("fc2", Linear(hidden_dim, dim, rng))
        self._hidden = None
        self._activated = None

    def _compute_output(self, input):
        self._hidden = self.fc1.forward(input)
        self._activated = self.act.forward(self._hidden)
        return self.fc2.forward(self._activated)

    def _compute_input_grad(self, input, output_grad):
        grad = self.fc2.backward(self._activated, output_grad)
        grad = self.act.backward(self._hidden, grad)
        return self.fc1.backward(input, grad)


class MultiHeadAttention(Module):
    """
    heads parallel attention maps of width d over projections of the tokens, dense or k-NN, merged by an output
    projection. The attention matrices of the last forward pass are kept in self.attention (batch, heads, n, n).
    """
    def __init__(self, d_m, heads, d, rng, kind="dense", k=None, temperature=1.0):
        super(MultiHeadAttention, self).__init__()
        assert d_m == heads * d
        assert kind == "dense" or k is not None

        self.d_m = d_m
        self.heads = heads
        self.d = d
        self.kind = kind
        self.k = k
        self.temperature = temperature

        for name in ("w_q", "w_k", "w_v", "w_o"):
            self.add_param(name, rng.truncated_normal((d_m, d_m), std=INIT_STD))
        self.add_param("b_o", np.zeros(d_m))

        self.attention = None
        self.mask = None
        self._qkv = None
        self._merged = None

    def _split_heads(self, x):
        batch, n, _ = x.shape
        return x.reshape(batch, n, self.heads, self.d).transpose(0, 2, 1, 3)

    def _merge_heads(self, x):
        batch, _, n, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(batch, n, self.d_m)

    def _compute_output(self, input):
        Q = self._split_heads(matmul(input, self.params["w_q"]))
        K = self._split_heads(matmul(input, self.params["w_k"]))
        V = self._split_heads(matmul(input, self.params["w_v"]))

        if self.kind == "knn":
            output, self.attention, self.mask = knn_attention_fast(Q, K, V, self.k, temperature=self.temperature)
        else:
            output, self.attention = dense_attention(Q, K, V, temperature=self.temperature)
            self.mask = None

        self._qkv = (Q, K, V)
        self._merged = self._merge_heads(output)
        return matmul(self._merged, self.params["w_o"]) + self.params["b_o"]

    def _compute_input_grad(self, input, output_grad):
        Q, K, V = self._qkv
        grad_merged = matmul(output_grad, self.params["w_o"].T)
        grad_q, grad_k, grad_v = attention_backward(Q, K, V, self.mask, self._split_heads(grad_merged),
                                                    temperature=self.temperature, attention=self.attention)

        self._head_grads = (self._merge_heads(grad_q), self._merge_heads(grad_k), self._merge_heads(grad_v))
        grad_q, grad_k, grad_v = self._head_grads
        return matmul(grad_q, self.params["w_q"].T) + matmul(grad_k, self.params["w_k"].T) + \
            matmul(grad_v, self.params["w_v"].T)

    def _update_parameters_grad(self, input, output_grad):
        flat_input = _flatten(input).T
        grad_q, grad_k, grad_v = self._head_grads

        self.grads["w_q"] += matmul(flat_input, _flatten(grad_q))
        self.grads["w_k"] += matmul(flat_input, _flatten(grad_k))
        self.grads["w_v"] += matmul(flat_input, _flatten(grad_v))
        self.grads["w_o"] += matmul(_flatten(self._merged).T, _flatten(output_grad))
        self.grads["b_o"] += np.sum(_flatten(output_grad), axis=0)

    def selection_margin(self):
        """
        Smallest top-k selection gap of the last forward pass, inf for dense attention.
        """
        if self.kind == "dense" or self._qkv is None:
            return float("inf")
        Q, K, _ = self._qkv
        return selection_margin(attention_scores(Q, K, self.temperature), self.k)

    def __repr__(self):
        kind = "k-NN (k={k})".format(k=self.k) if self.kind == "knn" else "dense"
        return "MultiHeadAttention {heads}x{d}, {kind}".format(heads=self.heads, d=self.d, kind=kind)


class Block(Module):
    """
    Pre-norm transformer block: x + attn(norm1(x)), then h + mlp(norm2(h)).
    """
    def __init__(self, cfg, rng):
        super(Block, self).__init__()
        self.norm1 = self.add_module("norm1", LayerNorm(cfg.d_m))
        self.attn = self.add_module("attn", MultiHeadAttention(cfg.d_m, cfg.heads, cfg.d, rng, kind=cfg.kind,
                                                               k=cfg.top_k, temperature=cfg.temperature))
        self.norm2 = self.add_module("norm2", LayerNorm(cfg.d_m))
        self.mlp = self.add_module("mlp", MLP(cfg.d_m, cfg.mlp_dim, rng))
        self.cache = None

    def _compute_output(self, input):
        normed1 = self.norm1.forward(input)
        attn_branch = self.attn.forward(normed1)
        hidden = input + attn_branch
        normed2 = self.norm2.forward(hidden)
        ffn_branch = self.mlp.forward(normed2)

        self.cache = {
            "normed1": normed1,
            "attn_branch": attn_branch,
            "hidden": hidden,
            "normed2": normed2,
            "ffn_branch": ffn_branch,
        }
        return hidden + ffn_branch

    def _compute_input_grad(self, input, output_grad):
        grad_hidden = output_grad + self.norm2.backward(
            self.cache["hidden"], self.mlp.backward(self.cache["normed2"], output_grad))
        return grad_hidden + self.norm1.backward(input, self.attn.backward(self.cache["normed1"], grad_hidden))
