from pretrain.attribute_masking import AttributeMasking, MaskTarget, apply_mask, mask_count, masking_accuracy, masking_loss
from pretrain.base import PretrainObjective
from pretrain.config import ContextConfig, MaskConfig
from pretrain.context_prediction import ContextPair, ContextPrediction, build_context_pairs, context_loss
from pretrain.edge_prediction import EdgePrediction, edgepred_loss, sample_negative_edges
from pretrain.supervised import SupervisedHead, SupervisedMultiTask, supervised_loss
