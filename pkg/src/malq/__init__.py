"""Tabular Q-learning over a malware-investigation workflow MDP."""

__version__ = "0.1.0"
