""" Shared constants of the coarse-to-fine segmentation toolkit. """

# Label values
IGNORE = 255 # reserved label value, excluded from losses and pseudo-label bookkeeping

# Per-pixel provenance codes (stored alongside every label mask)
PROVENANCE_MANUAL = 0
PROVENANCE_PSEUDO = 1
PROVENANCE_IGNORE = 2

# Domain tags (the first three are the on-disk codes of the dataset container)
DOMAIN_SYNTHETIC = 0
DOMAIN_REAL_COARSE = 1
DOMAIN_REAL_FINE = 2
DOMAIN_AUGMENTED = 3 # in-memory only, never serialized
DOMAIN_NAMES = {
    DOMAIN_SYNTHETIC: 'synthetic',
    DOMAIN_REAL_COARSE: 'real-coarse',
    DOMAIN_REAL_FINE: 'real-fine',
    DOMAIN_AUGMENTED: 'augmented'
}

# Annotation cost model in minutes per image
COARSE_MINUTES = 7.0
FINE_MINUTES = {
    'cityscapes': 90.0,
    'bdd': 75.0
}
SYNTHETIC_MINUTES = 0.0

# Labeled fractions of the coarse annotation reference datasets
COARSE_FRACTION = {
    'cityscapes': 0.6304,
    'bdd': 0.6981
}

# Dataset container
CONTAINER_MAGIC = b'C2FD'
CONTAINER_VERSION = 1

# Model checkpoint
CHECKPOINT_MAGIC = b'C2FM'
CHECKPOINT_VERSION = 1

# Inference scales and flips
TTA_SCALES = (0.5, 1.0, 2.0)
TTA_FLIPS = (False, True)
EVAL_SCALES = (0.5, 1.0, 2.0)

DEFAULT_SEED = 0
