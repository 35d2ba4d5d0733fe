"""Bayesian magnetometry with electron-spin quantum dots in a nuclear-spin bath.

Modules, bottom-up: ``quantcore`` (linear algebra), ``spinbath`` (bath
sector weights and a brute-force reference), ``boxchannel`` (the
single-dot decoherence channel and its N-dot product), ``bayesest``
(prior-averaged states, optimal observable, variance ratio),
``optimizer`` (optimal probe states), ``sweeper`` (time sweeps and
transition detection) and ``cli``.
"""

__version__ = "0.1.0"
