"""Toy unsupervised domain adaptation: oriented bars seen as images and as events."""
