"""Cooperative semantic text relaying over a three-node network.

Subpackages: text preprocessing (textpipe), physical layer (channel),
trainable blocks (semnet), protocol episodes (relay), the conventional
decode-and-forward baseline (baseline), the training curriculum (training),
and metrics / sweep experiments (metrics, sweep, cli).
"""

__version__ = "0.1.0"
