"""Networks built on gradtensor: the road-surface translator and the scene segmenter."""
