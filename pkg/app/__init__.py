"""FedLeak Lab - federated learning privacy laboratory."""

__version__ = "0.1.0"
