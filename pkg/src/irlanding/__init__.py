"""Infrared light-field drone landing: simulation and photodiode guidance."""
