"""Experiment drivers, configuration, output formats and the command-line interface."""
