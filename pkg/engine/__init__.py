"""
Engine package: Bayesian networks, KL ambiguity sets and uncertainty indices
"""
