"""Bayesian hierarchical linear mixed models for IPD meta-analysis of treatment
effect moderation, with g-prior mixtures and other shrinkage priors."""

__version__ = "0.1.0"
