"""Preterm-birth risk prediction: SVM and elastic-net learners against a clinical points score."""

__version__ = "0.1.0"
