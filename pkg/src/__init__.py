"""
Packet Classifier Toolchain
Pre-cut decision-tree packet classification with a bit-exact memory image
and a cycle-level accelerator model.
"""

__version__ = "1.0.0"
__author__ = "Packet Classification Team"
