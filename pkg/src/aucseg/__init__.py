"""Pixel-level pairwise AUC optimization for long-tail dense labeling."""

from .bank import (BankConfig, MaskedPatch, PasteRecord, RetrieveResult,
                   TailMemoryBank, missing_tail_classes, select_tail_classes)
from .coverage import (CoverageResult, empirical_presence, required_batch_size,
                       simulate_coverage, union_bound)
from .errors import FormatError, NumericalError, ValidationError
from .grids import (IGNORE, Batch, ClassStats, FeatureGrid, LabelGrid,
                    LossReport, ScoreGrid, class_stats)
from .losses import (PairLossResult, SURROGATES, ce_loss, combined_loss,
                     ova_auc_loss, ovo_auc_loss, pair_loss, pair_loss_naive,
                     softmax, softmax_backward)
from .metrics import (IouReport, Partition, argmax_labels, compute_tau,
                      imbalance_ratio, iou_report, make_partition,
                      ovo_auc_metric)
from .rng import Splitmix64
from .synth import (GenConfig, GeneratorTruth, class_means, generate,
                    read_segd, write_segd, zipf_shares)
from .train import (EvalRow, PixelModel, StepLog, TrainConfig, TrainResult,
                    evaluate, forward, init_model, learning_rate, load_model,
                    save_model, train, train_and_save, write_metrics_csv)

__version__ = "0.1.0"
