"""
Domain layer: models, configuration records, numerics and the detection/training services.
"""

