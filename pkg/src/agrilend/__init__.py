"""Farm lending under climate risk: model, anomalies, panel estimation, margins."""

__version__ = "0.1.0"
