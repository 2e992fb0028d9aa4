"""Extreme-value statistics toolkit.

Four frameworks for tail inference on tabular data:

* :mod:`evtkit.marginal` -- covariate-dependent peaks-over-threshold regression
* :mod:`evtkit.nbe` -- amortised neural Bayes estimation of an extreme quantile
* :mod:`evtkit.condex` -- covariate-driven conditional extremes and joint simulation
* :mod:`evtkit.tailprob` -- pairwise extremal dependence, clustering and
  non-parametric joint tail probabilities
"""

__version__ = "0.1.0"
