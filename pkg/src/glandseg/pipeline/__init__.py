"""Experiment orchestration: data, training, evaluation, reports."""
