"""
synthprint - Conditional synthetic fingerprint dataset toolkit.

Generates class- and material-conditioned synthetic fingerprints and evaluates
datasets with a minutiae matcher, quality metrics and a privacy scan.
"""

__version__ = "0.1.0"
__author__ = "synthprint Team"
__prog_name__ = "synthprint"  # CLI command name for messages
