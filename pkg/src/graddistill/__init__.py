"""Graph-aware distillation of a GraphSAGE teacher into a graph-free student."""

__version__ = "0.1.0"
