"""Text-to-CAD retrieval.

Learns a shared embedding space over natural-language queries and CAD
models represented two ways at once: as quantized sketch-and-extrude
command sequences and as sampled point clouds. Retrieval ranks a gallery
of fused CAD embeddings against an embedded text query by cosine
similarity.
"""

__version__ = "0.1.0"
