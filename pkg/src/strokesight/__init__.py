"""strokesight: adaptive EEG stroke assessment at desk scale.

Spectral band-power features, a GRU-TCN multi-task classifier, DQN-based
decision-threshold adaptation, diagnostic-accuracy statistics and scalp
topography rendering, exposed as a library, CLI and HTTP service.
"""

__version__ = "0.1.0"
