"""svdu: universal adversarial directions from the SVD of per-sample attacks.

A single small perturbation direction that fools a classifier on many
inputs at once can be read off the top right singular vector of a matrix
whose rows are normalized input-dependent attack directions. This package
provides the base attacks (gradient, FGSM, DeepFool), the SVD
universalizer and an iterative accumulation baseline, fooling-rate
evaluation, and empirical validators for the spectral concentration
bounds that explain why a handful of samples suffice.
"""

from svdu.errors import InputError, InternalError

__version__ = "0.1.0"

__all__ = ["InputError", "InternalError", "__version__"]
