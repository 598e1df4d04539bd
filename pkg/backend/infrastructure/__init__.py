"""
Infrastructure layer: file formats and storage (PPM images, annotations, weights, corpora, reports).
"""

