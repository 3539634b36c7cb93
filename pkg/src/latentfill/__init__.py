"""Multi-modal guided image inpainting through latent inversion of a
style-based generator.

The package is organized around the stages of the pipeline:

- :mod:`latentfill.data` ingests image corpora and derives edge maps.
- :mod:`latentfill.masking` generates and applies corruption masks.
- :mod:`latentfill.modeling` holds the encoder, mutual decoder, latent
  mapping networks, and the synthesis generator.
- :mod:`latentfill.losses` and :mod:`latentfill.metrics` implement the
  training objectives and the evaluation harness.
- :mod:`latentfill.training` orchestrates the two training phases.
- :mod:`latentfill.service` exposes inference over HTTP; :mod:`latentfill.cli`
  wires everything into commands.
"""

__version__ = "0.1.0"
