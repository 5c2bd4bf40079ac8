"""
Tests for the nrsr package.
"""
