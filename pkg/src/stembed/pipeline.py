"""End-to-end helper: render a scene, embed it with oracle embeddings, track, score."""

from dataclasses import dataclass

import numpy as np

from .clustering_tracker import segment_sequence
from .config import EMBEDDING_DIM, SEQUENCE_LENGTH
from .embedding_loss import LossConfig
from .mots_metrics import MotsReport, evaluate_id_maps
from .synthetic_scenes import OracleEmbeddingSpec, oracle_embeddings, render_sequence, separated_means


@dataclass
class TrackingRun:
    report: MotsReport
    labels: np.ndarray       # ground truth (T, H, W)
    predicted: np.ndarray    # tracker output (T, H, W)


def oracle_tracking(spec, cfg=LossConfig(), sigma_frac=0.1, drift_frac=0.2, seed=0,
                    life_span=SEQUENCE_LENGTH, dim=EMBEDDING_DIM):
    """Track ``spec`` from oracle embeddings restricted to its detection masks.

    Embedding noise is ``sigma_frac * rho_a`` and every instance mean drifts
    by ``drift_frac * rho_r`` per frame in a random unit direction.
    """
    seq = render_sequence(spec)
    ids = [o.id for o in spec.objects]
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    ospec = OracleEmbeddingSpec(separated_means(ids, dim, cfg.rho_r), sigma=sigma_frac * cfg.rho_a,
                                drift=drift_frac * cfg.rho_r * direction, seed=seed)
    emb = oracle_embeddings(seq.labels, ospec)
    predicted = segment_sequence(emb, ~seq.detections, cfg, life_span=life_span, seed=seed)
    return TrackingRun(evaluate_id_maps(predicted, seq.labels), seq.labels, predicted)
