"""Federated-learning simulator for imbalance-aware ransomware classification.

Submodules:
    nn          dense feedforward network, losses, gradients, SGD
    federation  client update loop, FedAvg aggregation, federation driver
    data        datasets, train/test split, client partitioning, imbalance ratios
    pe          Windows PE header parser and 15-dim static feature extraction
    metrics     confusion matrix, accuracy/precision/recall/F1, trial reports
    experiment  end-to-end experiment configuration and trial runner
    cli         command-line entry points
"""

__version__ = "0.1.0"
