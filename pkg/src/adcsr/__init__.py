"""adcsr: compress one-step diffusion super-resolution models into pruned diffusion-GAN students."""

__version__ = "0.1.0"

SCHEMA_VERSION = 1

# Fixed super-resolution factor of the whole pipeline (LR -> 4x HR).
SCALE_FACTOR = 4
