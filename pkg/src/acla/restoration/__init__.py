"""Backbone, degradations, metrics, optimizer and training loop."""
