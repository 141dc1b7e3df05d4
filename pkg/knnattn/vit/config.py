#!/usr/bin/env python

from knnattn.attention.selection import K_RULES
from knnattn.attention.selection import choose_k
from knnattn.utils.config import ConfigBase

ATTENTION_KINDS = ("dense", "knn")
POOLINGS = ("cls", "gap")
CLUTTER_KINDS = ("gaussian", "none")


class ModelConfig(ConfigBase):
    """
    Architecture of the toy vision transformer. With k unset the k of a knn model follows k_rule over the token count.
    """
    FIELDS = (
        ("grid", [4, 4]),
        ("input_dim", 8),
        ("d_m", 16),
        ("depth", 2),
        ("heads", 2),
        ("d", 8),
        ("mlp_dim", 32),
        ("kind", "knn"),
        ("k", None),
        ("k_rule", "half"),
        ("pooling", "gap"),
        ("classes", 4),
        ("temperature", 1.0),
    )

    def validate(self):
        self.require(len(self.grid) == 2 and min(self.grid) >= 1, "grid must be [rows, cols] with positive entries")
        self.require(self.d_m == self.heads * self.d, "d_m must equal heads x d")
        self.require(min(self.input_dim, self.depth, self.mlp_dim) >= 1,
                     "input_dim, depth and mlp_dim must be positive")
        self.require(self.classes >= 2, "at least two classes are needed")
        self.require(self.temperature > 0, "temperature must be positive")
        self.require(self.kind in ATTENTION_KINDS,
                     "kind must be one of {kinds}".format(kinds=", ".join(ATTENTION_KINDS)))
        self.require(self.pooling in POOLINGS, "pooling must be one of {poolings}".format(poolings=", ".join(POOLINGS)))
        self.require(self.k_rule in K_RULES, "k_rule must be one of {rules}".format(rules=", ".join(K_RULES)))
        if self.kind == "knn" and self.k is not None:
            self.require(1 <= self.k <= self.n_tokens, "k={k} out of range 1..{n}".format(k=self.k, n=self.n_tokens))

    @property
    def num_patches(self):
        return self.grid[0] * self.grid[1]

    @property
    def n_tokens(self):
        return self.num_patches + (1 if self.pooling == "cls" else 0)

    @property
    def top_k(self):
        """
        k used by the attention layers, None for dense attention.
        """
        if self.kind == "dense":
            return None
        return self.k if self.k is not None else choose_k(self.n_tokens, self.k_rule)


class TrainConfig(ConfigBase):
    FIELDS = (
        ("epochs", 30),
        ("batch_size", 16),
        ("lr", 1e-3),
        ("beta1", 0.9),
        ("beta2", 0.999),
        ("eps", 1e-8),
        ("weight_decay", 0.0),
        ("seed", 0),
        ("threads", 1),
        ("accuracy_threshold", 0.9),
    )

    def validate(self):
        self.require(self.epochs >= 1 and self.batch_size >= 1, "epochs and batch_size must be positive")
        self.require(self.lr >= 0, "lr must not be negative")
        self.require(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "betas must lie in [0, 1)")
        self.require(self.eps > 0, "eps must be positive")
        self.require(self.weight_decay >= 0, "weight_decay must not be negative")
        self.require(self.threads >= 1, "threads must be positive")
        self.require(0 < self.accuracy_threshold <= 1, "accuracy_threshold must lie in (0, 1]")


class SyntheticTaskConfig(ConfigBase):
    """
    Every image is a grid of patch vectors: signal_patches of them scattered around the mean of the image's class,
    the rest clutter. class_means, if given, holds one vector of length patch_dim per class.
    """
    FIELDS = (
        ("classes", 4),
        ("grid", [4, 4]),
        ("patch_dim", 8),
        ("signal_patches", 4),
        ("signal_norm", 3.0),
        ("class_means", None),
        ("clutter", "gaussian"),
        ("clutter_scale", 1.0),
        ("sigma", 0.5),
        ("train_size", 64),
        ("eval_size", 64),
        ("seed", 0),
    )

    def validate(self):
        self.require(self.classes >= 2, "at least two classes are needed")
        self.require(len(self.grid) == 2 and min(self.grid) >= 1, "grid must be [rows, cols] with positive entries")
        self.require(1 <= self.signal_patches < self.num_patches, "signal_patches must satisfy 1 <= s < n")
        self.require(self.patch_dim >= 1 and self.signal_norm > 0, "patch_dim and signal_norm must be positive")
        self.require(self.sigma >= 0 and self.clutter_scale >= 0, "sigma and clutter_scale must not be negative")
        self.require(self.clutter in CLUTTER_KINDS, "clutter must be one of {kinds}".format(
            kinds=", ".join(CLUTTER_KINDS)))
        for size in (self.train_size, self.eval_size):
            self.require(size >= self.classes and size % self.classes == 0,
                         "split sizes must be positive multiples of classes")
        if self.class_means is not None:
            self.require(len(self.class_means) == self.classes, "one class mean per class")
            self.require(all(len(mean) == self.patch_dim for mean in self.class_means),
                         "class means must have length patch_dim")

    @property
    def num_patches(self):
        return self.grid[0] * self.grid[1]

    def conforms(self, model_cfg):
        return list(self.grid) == list(model_cfg.grid) and self.patch_dim == model_cfg.input_dim and \
            self.classes == model_cfg.classes
