"""Benchmark problems, the coordinate-descent baseline and the command line."""
