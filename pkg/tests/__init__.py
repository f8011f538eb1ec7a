"""Test suite for vmtsim."""
