"""Dual-branch attention-guided CNN + ViT binary image classifier.

A self-contained deep-learning stack: float64 tensor core with reverse-mode
autodiff, the two attention building blocks (ROI-mask gating and channel
attention), a residual CNN branch and a ViT branch fused into one classifier,
plus data pipeline, Adam training with early stopping, metrics, heatmaps, and
an ablation CLI.
"""

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "backward", "__version__"]


def __getattr__(name):
    # lazy re-exports keep `import aresnet_vit.cli` numpy-free until the CLI
    # has pinned BLAS thread counts
    if name in ("Tensor", "Tape", "backward"):
        from . import tensor

        return getattr(tensor, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
