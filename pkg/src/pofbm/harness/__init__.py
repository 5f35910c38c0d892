"""Configuration, experiment orchestration, reporting and the command line."""
