"""Synthetic dataset generation, augmentation and Netpbm I/O."""
