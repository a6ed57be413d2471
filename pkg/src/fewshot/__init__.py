"""Few-shot metric learning on small image datasets.

A numpy autodiff engine, a four-block convolutional embedding backbone,
contrastive (pair) and episodic (cosine-attention matching) trainers, a
stacked variant that trains the matching head over a frozen contrastive
extractor, and the evaluation suite around them: episodic accuracy/F1 and
k-means/silhouette cluster scoring.
"""

from .errors import (ConfigError, DataError, FewshotError, GraphError,
                     ImageFormatError, ImageTruncatedError, NumericError,
                     ShapeError, WeightsFormatError)
from .tensor import (Tensor, backward, tensor, zeros, constant)
from .optim import Adam, SGD
from .gradcheck import finite_diff_check
from .weights import (NetworkWeights, load_weights, save_weights,
                      ROLE_NONE, ROLE_BACKBONE, ROLE_SIAMESE_HEAD,
                      ROLE_FCE_G, ROLE_FCE_F)
from .nets import (BackboneSpec, init_backbone, init_siamese, init_fce,
                   embed_backbone, siamese_embed, siamese_forward_pair,
                   contrastive_loss, fce_support, fce_query, matching_predict,
                   ssm_embed, frozen_view)
from .images import (AugmentOp, augment, bilinear_resize, decode_ppm,
                     encode_ppm, load_image, read_image_file, write_ppm,
                     default_augment_ops)
from .data import (DatasetManifest, ImageRecord, SplitSpec, apply_split,
                   load_pixels, read_split_file, scan_dataset, split_classes,
                   synth_dataset, write_split_file, expand_with_augments)
from .episodes import (Episode, PairBatch, episode_accuracy, one_hot,
                       sample_episode, sample_pairs)
from .metrics import (ClusterAssignment, F1Report, confusion_matrix, f1_scores,
                      kmeans, silhouette_score, silhouette_values)
from .pipelines import (MetricsReport, RunConfig, cluster_eval, embed_records,
                        evaluate_fewshot, mean_pair_distances, train_matching,
                        train_siamese, train_ssm)
from .cli import main, parse_config

__version__ = "0.1.0"
