"""
App layer: FastAPI wiring, routing, and HTTP-specific concerns.
"""

