"""Experiment orchestration: scenario registry, configs, runner, reports, CLI."""
