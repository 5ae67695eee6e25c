"""Convolution-free transformer GAN for single-image super-resolution."""

from .discriminator import Discriminator, DiscriminatorConfig, concat_condition
from .generator import Generator, GeneratorConfig, downsample2, upsample2
from .losses import (LossConfig, discriminator_loss, generator_adv_loss, learnable_feature,
                     reconstruction_loss, total_generator_loss)
from .metrics import psnr, ssim, visual_activation_map
from .patch_ops import (PatchSequence, PositionalEmbedding, make_positional_embedding,
                        merge_patches, split_into_patches)
from .patch_translator import PatchTranslator
from .transformer import TransformerConfig, TransformerStack

__version__ = "0.1.0"
