"""Slot-level simulator of repeater-assisted 5G mmWave networks on an urban grid."""

__version__ = "0.1.0"
