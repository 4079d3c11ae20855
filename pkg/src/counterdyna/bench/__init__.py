"""Baseline controllers, evaluation and the experiment suite."""
