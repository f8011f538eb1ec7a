"""Clocked hardware units: VMT, PMU, ELU and interconnect."""
