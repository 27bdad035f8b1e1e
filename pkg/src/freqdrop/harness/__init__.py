"""Experiment orchestration: config, training, evaluation, comparison and the CLI."""
