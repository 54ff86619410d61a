"""Hybrid network intrusion detection: SMOTE balancing, gain-ranked feature
selection with a second-order boosted tree engine, and cross-validated
evaluation of classical and neural classifiers."""

__version__ = "0.1.0"
