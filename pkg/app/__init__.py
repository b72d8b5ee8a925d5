"""
Attributed Graph Alignment Package
"""

__version__ = "0.1.0"
__author__ = "Attributed Graph Alignment Team"
