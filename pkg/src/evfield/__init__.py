"""Event-camera radiance fields.

Reconstructs a grayscale neural radiance field directly from an event
stream, using contrast-maximisation motion priors, an event-rate geometry
prior, and density-guided patch sampling.  Ships with a synthetic scene
simulator so every stage can be exercised against ground truth.
"""

__version__ = "0.1.0"
