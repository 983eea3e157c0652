"""Sparse-sampling Doppler OCT reconstruction."""
