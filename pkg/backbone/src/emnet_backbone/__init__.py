"""Expression backbone training and feature-map export.

Fine-tunes a face-recognition teacher for expression classification, then
trains a compact student network in two stages (feature regression against
the teacher's pool5 output, followed by cross-entropy with a fresh
fully-connected head), and exports per-frame convolutional feature maps in
the trajectory-pooling pipeline's tensor format.
"""

__version__ = "0.1.0"
