"""Byzantine-robust, differentially private sign-based federated learning."""

__version__ = "0.1.0"
