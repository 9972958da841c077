"""palkit: progressive-lens distortion simulation and discomfort analytics.

Subpackages cover the full batch pipeline: displacement-field synthesis and
decomposition (``distortion``), head-pose circular statistics (``circular``),
gaze event detection (``gaze``), foveal distortion exposure (``exposure``),
gradient-boosted discomfort modelling (``model``), synthetic session
generation (``synth``), on-disk formats and dataset assembly (``sessions``),
and the command-line surface (``cli``).
"""

__version__ = "0.1.0"
