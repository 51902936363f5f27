"""Benchmark harness: dataset generation, load driving, and reporting."""
