"""Multilevel and Markov-basis sampling of integer lattice fibers."""
