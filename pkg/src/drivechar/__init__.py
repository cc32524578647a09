"""Driving-characteristic estimation and lane-change behaviour prediction."""

__version__ = "0.1.0"
