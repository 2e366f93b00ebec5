"""Region-controlled garment outpainting toolbox (python bindings)."""

from ._core import (  # noqa: F401
    ToyFashionError,
    attribute_accuracy,
    default_dataset_spec,
    denoise_loss,
    extract_stub,
    forward_noise,
    generate_sample,
    make_schedule,
    make_splits,
    rada_apply,
    region_loss,
    render_with_tokens,
    resize_mask,
    sample_images,
)

__all__ = [
    "ToyFashionError",
    "attribute_accuracy",
    "default_dataset_spec",
    "denoise_loss",
    "extract_stub",
    "forward_noise",
    "generate_sample",
    "make_schedule",
    "make_splits",
    "rada_apply",
    "region_loss",
    "render_with_tokens",
    "resize_mask",
    "sample_images",
]
