"""Experiment harness: datasets, evaluation sweeps, config, and the CLI."""
