"""Component-aware sketch-to-photo synthesis toolkit.

Subpackages and modules:

- :mod:`sketchgen.nn` -- numpy autodiff core, layers, optimizer
- :mod:`sketchgen.data` -- datasets, sketch synthesis, component layouts
- :mod:`sketchgen.stage1` -- per-component self-attention autoencoders
- :mod:`sketchgen.afig` -- feature canvas assembly and gated generation
- :mod:`sketchgen.sarr` -- iterative refinement with identity preservation
- :mod:`sketchgen.losses` -- training objectives
- :mod:`sketchgen.metrics` -- evaluation metrics and reports
- :mod:`sketchgen.saliency` -- saliency clustering for non-facial layouts
- :mod:`sketchgen.harness` -- experiment orchestration and ablations
"""

__version__ = "0.1.0"
