"""Partial-ordering dose-combination escalation designs.

Implements two phase-I designs for drug-combination trials over a partially
ordered dose grid: a two-parameter Bayesian logistic model with AIC-based
ordering selection (POBLRM) and the one-parameter power-model continual
reassessment method (POCRM), each with optional randomisation against a
standard-of-care arm.  Includes Monte Carlo operating characteristics,
hyperparameter calibration, scenario generation, a benchmark, a CLI, and a
cohort-by-cohort conduct service.
"""

__version__ = "0.1.0"
