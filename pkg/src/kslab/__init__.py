"""Executable companion to the stochastic filtering and measure-valued Kolmogorov equation framework."""
