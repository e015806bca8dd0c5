"""Note-value recognition for polyphonic piano performances."""
__version__ = "0.1.0"
