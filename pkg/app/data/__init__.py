"""Trajectory datasets and the synthetic data generator."""
