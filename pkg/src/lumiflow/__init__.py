"""lumiflow: desk-scale light editing with disentangled renders and flow matching.

Core surface:
    radiometry      linear-RGB exposure/compositing/relighting/tone mapping
    render          procedural disentangled renderer (ambient + direct passes)
    control_frames  movement maps, object crops, color/intensity frames
    datagen         paired dataset generation and manifests
    tokenizer       space-to-depth latents, sequence assembly, token pruning
    mspe            multi-signal positional encoding (rotary + NTK scaling)
    model           the ToyDiT velocity transformer
    flowmatch       flow-matching training, verification, and sampling
    metrics         PSNR, similarity backends, benchmark harness
"""

from .control_frames import BoundingBox
from .radiometry import composite_linear, illumination_gain, luminance_percentile, relight, tone_map

__all__ = [
    "BoundingBox",
    "composite_linear",
    "illumination_gain",
    "luminance_percentile",
    "relight",
    "tone_map",
]

__version__ = "0.1.0"
