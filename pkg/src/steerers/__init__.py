"""Steerers: linear maps on keypoint descriptions that encode image rotations."""
from .descriptor import (DescriptorMatrix, describe, detect_keypoints, rotate_image_continuous,
                         rotate_image_quarter, rotate_keypoints, upsift_steerer)
from .fit import (CorrespondenceBatch, eval_match_likelihood, fit_generator, fit_steerer_anchored,
                  fit_steerer_orthogonal, prune_by_eigenvalue, recover_orthogonal_from_gram)
from .group_reps import (LieGenerator, PlanarRotation, Steerer, build_fixed_generator,
                         build_fixed_steerer, decompose_irreps, discretize_so2, exp_generator,
                         invariant_projector, spectrum, steerer_power, verify_representation)
from .matcher import MatchSet, MatcherConfig, dual_softmax, mutual_nn_matches

__version__ = "0.1.0"
