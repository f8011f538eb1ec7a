"""Cycle loop, run metrics and the experiment harness."""
