from .dataset import Batch, Dataset, DatasetError, FaceSample, expand_dataset
from .dictionary import DuplicateHerbError, HerbDictionary, UnknownHerbError
from .faces import (
    DEFAULT_GEOMETRY,
    ORGANS,
    REGIONS,
    AugmentConfigError,
    AugmentParams,
    CropGeometry,
    GeometryError,
    Transform,
    apply_transform,
    augment,
    crop_resize,
    draw_transform,
    segment_face,
)
from .io import (
    ChecksumError,
    DuplicateSampleError,
    MissingDatasetFileError,
    load_dataset,
    read_image,
    save_dataset,
)
from .synthetic import (
    HerbSignal,
    SignalSpec,
    SyntheticError,
    decodability_f1,
    default_signal_spec,
    gen_synthetic,
    pixel_rule_decode,
)
