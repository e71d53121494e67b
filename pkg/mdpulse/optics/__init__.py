# Synthetic skin-patch video rendering
