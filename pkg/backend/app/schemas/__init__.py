"""
Pydantic schemas (DTOs) used by the HTTP API layer.
"""

