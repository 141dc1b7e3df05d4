#!/usr/bin/env python

import json
import os

import pandas as pd

from knnattn.diagnostics.metrics import attn_std
from knnattn.diagnostics.metrics import branch_ratio
from knnattn.diagnostics.metrics import cos_sim
from knnattn.diagnostics.metrics import nonlocality

REPORT_COLUMNS = ["layer", "cos_sim", "attn_std", "attn_ratio", "ffn_ratio", "nonlocality_mean",
                  "nonlocality_per_head"]
# read back with pandas.read_csv(path, comment="#")
STD_NOTE = "# std columns use the population denominator n\n"


class LayerDiagnostics(object):
    def __init__(self, layer, cos_sim, attn_std, attn_ratio, ffn_ratio, nonlocality_per_head, nonlocality_mean):
        self.layer = layer
        self.cos_sim = cos_sim
        self.attn_std = attn_std
        self.attn_ratio = attn_ratio
        self.ffn_ratio = ffn_ratio
        self.nonlocality_per_head = list(nonlocality_per_head)
        self.nonlocality_mean = nonlocality_mean

    def __str__(self):
        return "Layer {l}: CosSim {cs:.4f}, std {std:.4f}, attn ratio {ar:.4f}, ffn ratio {fr:.4f}, " \
               "nonlocality {nl:.4f}".format(l=self.layer, cs=self.cos_sim, std=self.attn_std, ar=self.attn_ratio,
                                             fr=self.ffn_ratio, nl=self.nonlocality_mean)

    def to_dict(self):
        return {
            "layer": self.layer,
            "cos_sim": self.cos_sim,
            "attn_std": self.attn_std,
            "attn_ratio": self.attn_ratio,
            "ffn_ratio": self.ffn_ratio,
            "nonlocality_mean": self.nonlocality_mean,
            "nonlocality_per_head": list(self.nonlocality_per_head),
        }


class DiagnosticsReport(object):
    def __init__(self, layers):
        self.layers = list(layers)

    def __str__(self):
        return "\n".join(str(layer) for layer in self.layers)

    def __eq__(self, other):
        if not isinstance(other, DiagnosticsReport):
            return False
        return self.to_dict() == other.to_dict()

    def to_dict(self):
        return {"std_denominator": "n", "layers": [layer.to_dict() for layer in self.layers]}

    def to_frame(self):
        rows = list()
        for layer in self.layers:
            row = layer.to_dict()
            row["nonlocality_per_head"] = ";".join(repr(value) for value in layer.nonlocality_per_head)
            rows.append(row)
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def diagnose(trace):
    layers = list()
    for l, layer in enumerate(trace.layers):
        per_head, layer_mean = nonlocality(layer.attention, trace.grid, trace.cls_present)
        layers.append(LayerDiagnostics(
            layer=l,
            cos_sim=cos_sim(layer.tokens),
            attn_std=attn_std(layer.attention),
            attn_ratio=branch_ratio(layer.attn_branch, layer.tokens),
            ffn_ratio=branch_ratio(layer.ffn_branch, layer.ffn_input),
            nonlocality_per_head=per_head,
            nonlocality_mean=layer_mean,
        ))
    return DiagnosticsReport(layers)


def write_report(report, out_dir, name="diagnostics"):
    """
    Writes <name>.csv (one row per layer) and <name>.json.
    :return: (csv path, json path)
    """
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)

    csv_path = os.path.join(out_dir, "{name}.csv".format(name=name))
    json_path = os.path.join(out_dir, "{name}.json".format(name=name))

    with open(csv_path, "w") as outfile:
        outfile.write(STD_NOTE)
        report.to_frame().to_csv(outfile, index=False)
    with open(json_path, "w") as outfile:
        json.dump(report.to_dict(), outfile, indent=2, sort_keys=True)

    return csv_path, json_path
