"""Single-source open-domain generalization with learned style synthesis and open-sample mixing."""

__version__ = "0.1.0"
