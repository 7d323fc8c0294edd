"""cnxc: a self-contained CNN pipeline for pneumonia detection on chest X-rays.

Pure numpy implementation: tensor helpers and a documented PRNG, layer
forward/backward passes, Adam with plateau LR scheduling and early stopping,
CLAHE and geometric augmentation preprocessing, dataset handling, training
and evaluation (confusion matrix, precision/recall/F1, ROC/AUC), and
Grad-CAM explanations. The `cnxc` CLI binds the pipeline together.
"""

__version__ = "0.1.0"
