"""
marblr package

Online Bayesian logistic model revision (BLR and MarBLR).
"""
__version__ = "0.1.0"
