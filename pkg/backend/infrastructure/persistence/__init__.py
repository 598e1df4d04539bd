"""
Persistence layer implementations for training jobs.
"""

