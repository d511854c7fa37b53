"""
Tests for synthprint.
"""
