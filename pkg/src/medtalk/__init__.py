"""Emotional facial rig animation driven by audio, with label, text or image guidance."""
__version__ = "0.1.0"
