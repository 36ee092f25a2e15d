"""Memory-augmented attention GAN that turns rendered frames into realistic ones."""
from .losses import (LAMBDA_L1, LAMBDA_MASK, LAMBDA_TV, discriminator_loss, gan_loss, generator_loss,
                     mask_norm, total_variation)
from .memory import (MemoryBank, load_bank, memory_retrieve, memory_update, nearest_key, save_bank,
                     smooth_retrieved, threshold_triplet_loss, triplet_candidates)
from .networks import (AdaIN, ConvEncoder, FrameWindow, Generator, PatchDiscriminator, composite_attention,
                       discriminate, extract_spatial_feature, generate, instance_norm, windows_tensor)
from .training import (PairedSequence, Refiner, RefinerConfig, load_refiner, rebuild_bank, refine_sequence,
                       save_refiner, separation_loss, train_refiner)

__all__ = [name for name in dir() if not name.startswith("_")]
