"""From-scratch low-dose CT denoising: tensors, layers, HRNet/UNet models, a
paired LDCT/NDCT simulator, metrics and a high-frequency noise analysis."""

__version__ = "0.1.0"
