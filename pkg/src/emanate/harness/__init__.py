"""Experiment plans, IQ file persistence, runs, sweeps and reports."""
