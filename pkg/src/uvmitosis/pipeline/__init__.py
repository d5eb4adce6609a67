"""Dataset handling, augmentation, synthesis, training and inference."""
