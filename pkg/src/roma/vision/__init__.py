"""Image handling, LBP texture scoring and adaptive rotation encoding."""
from roma.vision.ares import (
    RegionBox, RotationRecord, adaptive_region_select, apply_rotation_augment, best_candidate_box,
    bilinear_sample, candidate_boxes, covered_patches, crop_source_coords, inscribed_rotate_crop,
    inscribed_side, random_crop_baseline, resize_bilinear, select_region, select_top_patch,
)
from roma.vision.image import (
    PatchGrid, check_image, merge_patches, patchify_batch, read_image, split_patches, to_uint8,
    write_png, write_ppm,
)
from roma.vision.lbp import DESCRIPTORS, LBPDescriptor, ScoreMap, entropy_bits, grayscale, lbp_map, patch_scores
