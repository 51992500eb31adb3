"""Runnable face: config, data generation, split manifests, experiment drivers, CLI."""
