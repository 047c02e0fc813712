from .gcn import GeneratorSpec, GcnGenerator, kernel_for_level, layer_shape_trace
from .patchgan import DiscriminatorSpec, PatchDiscriminator, condition_pair, receptive_field
from .checkpoint import save_model, load_generator, load_discriminator, save_tensors, load_tensors

__all__ = [
    "GeneratorSpec", "GcnGenerator", "kernel_for_level", "layer_shape_trace",
    "DiscriminatorSpec", "PatchDiscriminator", "condition_pair", "receptive_field",
    "save_model", "load_generator", "load_discriminator", "save_tensors", "load_tensors",
]
