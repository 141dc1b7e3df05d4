#!/usr/bin/env python
import os
from setuptools import setup


def read(file_name):
    return open(os.path.join(os.path.dirname(__file__), file_name)).read()


setup(name="knnattn",
      version="0.1.0",
      description="k-NN attention kernels, gradient analysis and attention diagnostics for vision transformers",
      install_requires=[
          'pandas==2.2.2',
          'numpy==1.26.4',
      ],
      packages=["knnattn",
                "knnattn.attention",
                "knnattn.cli",
                "knnattn.diagnostics",
                "knnattn.lemmas",
                "knnattn.numerics",
                "knnattn.utils",
                "knnattn.vit"],
      entry_points={
          "console_scripts": ["knn-attn=knnattn.cli.commands:main"],
      },
      long_description=read("README.md"),
)
