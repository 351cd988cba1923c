"""Data augmentation consistency (DAC) versus augmented ERM: estimators, closed-form
theory, expansion checks and seeded Monte Carlo experiments."""

__version__ = "0.1.0"
