#!/usr/bin/env python

from collections import OrderedDict

import numpy as np


class Adam(object):
    """
    Adam with bias-corrected moments and decoupled weight decay:
        m = b1 m + (1 - b1) g
        v = b2 v + (1 - b2) g^2
        p -= lr (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps) + lr wd p
    Parameters are updated in place.
    :param params: list of (name, array) pairs, the arrays owned by the model
    """
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = OrderedDict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay

        self.t = 0
        self.m = OrderedDict((name, np.zeros_like(value)) for name, value in self.params.items())
        self.v = OrderedDict((name, np.zeros_like(value)) for name, value in self.params.items())

    @staticmethod
    def from_config(params, train_cfg):
        return Adam(params, lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.eps,
                    weight_decay=train_cfg.weight_decay)

    def step(self, grads):
        """
        :param grads: list of (name, array) pairs matching the parameters
        """
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t

        for name, grad in grads:
            param = self.params[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad

            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2

            if self.weight_decay > 0:
                param -= self.lr * self.weight_decay * param
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def load_state(self, t, m, v):
        for name in self.params:
            assert m[name].shape == self.params[name].shape and v[name].shape == self.params[name].shape
            self.m[name] = np.array(m[name], dtype=np.float64)
            self.v[name] = np.array(v[name], dtype=np.float64)
        self.t = int(t)
