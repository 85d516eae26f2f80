"""Snap-joint assembly failure prediction and recovery."""
