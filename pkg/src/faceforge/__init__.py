"""faceforge: semantic-controllable face asset generation at desk scale.

Subpackages: labels (attribute schema), toydata (procedural dataset),
uvtex (texture-space math), normnet (de-lighting normalization), disgan
(two-step disentangled GAN), editctl (inversion and editing), evalkit
(metrics), store/service (persistence and HTTP API), pipeline, cli.
"""

__version__ = "0.1.0"

from .labels import (AGE_GROUPS, ETHNICITIES, GENDERS, AttributeLabel,
                     SoftLabel, encode_label, mix_labels, sample_attributes)
from .toydata import (FaceAsset, ToyRecord, apply_synthetic_lighting,
                      generate_toy_asset, make_dataset, make_record,
                      split_dataset)

__all__ = [
    "AGE_GROUPS", "ETHNICITIES", "GENDERS", "AttributeLabel", "SoftLabel",
    "FaceAsset", "ToyRecord", "encode_label", "mix_labels",
    "sample_attributes", "apply_synthetic_lighting", "generate_toy_asset",
    "make_dataset", "make_record", "split_dataset", "__version__",
]
