"""Orchestration: corpus, configuration, stages and the command line."""
