"""Travel-mode inference from GPS trajectories.

Kinematic feature extraction into fixed 70x5 segments, 1-D CNN baseline
classifiers, and semi-supervised DCGAN training with a K+1 discriminator,
all deterministic and CPU-only.  See the README for the CLI walkthrough.
"""

__version__ = "0.1.0"
