"""Experiment package for risk-aware active localization."""
