"""Image, configuration and checkpoint I/O."""
