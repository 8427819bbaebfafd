"""Few-shot font generation with metric-learned style encoders (AGIS-style and EMD-style backbones)."""

from .data import (GlyphCorpus, GlyphImage, ReferenceSet, StyleParams, content_reference, import_corpus,
                   sample_style_refs, synthesize_corpus, write_corpus)
from .embedding import (LabeledEmbeddings, best_nmi_over_restarts, extract_style_embeddings, kmeans_pp, nmi,
                        project_2d, recall_at_k, tsne)
from .losses import LossWeights, PerceptualExtractor, contextual_loss, dml_loss, emd_weighted_l1, l1_loss
from .metrics import MetricReport, evaluate_font_set, fid, psnr, ssim
from .models import ModelBundle, ModelConfig, load_bundle, mix_emd, normalize_embedding, save_bundle
from .training import TrainSchedule, TrainState, finetune_agis, generate, pretrain_agis, train_emd

__version__ = "0.1.0"
