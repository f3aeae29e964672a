"""Spatio-temporal convolutional autoencoders for fall detection."""
