"""
Domain services encapsulating core use cases and algorithms.
"""

