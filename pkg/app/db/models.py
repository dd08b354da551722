"""
SRPL domain types

Records and corpora are the unit of ingestion; networks, heads and reports
are what the services produce from them. Array fields are numpy float64
unless noted otherwise.
"""
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import InsufficientDataError, UsageError
from app.core.status import (
    ADAPTER_INIT_UNIFORM, ADAPTER_INITS, LOGIT_METRICS, METRIC_INNER,
    MODE_SRPL, RADIUS_MODES, RADIUS_PER_CLASS, TAG_ENROLL,
    TRAIN_MODES
)

# Marker for the true class of an utterance from a speaker outside the enrolled set
OUTLIER = -1


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """One utterance's embedding (the pre-adapter vector) with its labels."""
    speaker_id: str
    utterance_id: str
    vector: np.ndarray
    tag: str = TAG_ENROLL

    @property
    def key(self) -> Tuple[str, str]:
        return (self.speaker_id, self.utterance_id)


@dataclass(eq=False)
class Corpus:
    """Validated collection of records sharing one dimension."""
    records: List[EmbeddingRecord]
    dimension: int
    _matrix: Optional[np.ndarray] = field(default=None, init=False, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def matrix(self) -> np.ndarray:
        """All vectors stacked row-wise, shape (n, dimension)."""
        if self._matrix is None:
            if self.records:
                self._matrix = np.vstack([r.vector for r in self.records])
            else:
                self._matrix = np.zeros((0, self.dimension))
            self._matrix.setflags(write=False)
        return self._matrix

    def speakers(self) -> List[str]:
        """Distinct speaker ids, sorted."""
        return sorted({r.speaker_id for r in self.records})

    def indices_by_speaker(self) -> Dict[str, List[int]]:
        grouped: Dict[str, List[int]] = {}
        for index, record in enumerate(self.records):
            grouped.setdefault(record.speaker_id, []).append(index)
        return grouped


@dataclass(frozen=True)
class OpenSetSplit:
    """One fold of the open-set protocol. Record lists index into the corpus."""
    fold_index: int
    target_speakers: Tuple[str, ...]
    outlier_speakers: Tuple[str, ...]
    reserved_speakers: Tuple[str, ...]
    enroll_records: Tuple[int, ...]
    test_target_records: Tuple[int, ...]
    test_outlier_records: Tuple[int, ...]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        return {key: list(value) if isinstance(value, tuple) else value for key, value in data.items()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'OpenSetSplit':
        return cls(
            fold_index=int(data['fold_index']),
            target_speakers=tuple(data['target_speakers']),
            outlier_speakers=tuple(data['outlier_speakers']),
            reserved_speakers=tuple(data['reserved_speakers']),
            enroll_records=tuple(int(i) for i in data['enroll_records']),
            test_target_records=tuple(int(i) for i in data['test_target_records']),
            test_outlier_records=tuple(int(i) for i in data['test_outlier_records'])
        )


@dataclass(eq=False)
class AdapterNetwork:
    """
    3-layer MLP parameters. weights[i] has shape (layer_dims[i], layer_dims[i+1]),
    so a batch row-vector x maps as x @ W + b.
    """
    layer_dims: Tuple[int, int, int, int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) != 4:
            raise UsageError(f"need 4 layer dims, got {len(self.layer_dims)}")
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise UsageError("adapter needs exactly 3 weight matrices and 3 bias vectors")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise UsageError(
                    f"layer {i} shapes {w.shape}/{b.shape} do not chain with dims {self.layer_dims}"
                )

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> List[np.ndarray]:
        """Parameters in checkpoint order: W1, b1, W2, b2, W3, b3."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def copy(self) -> 'AdapterNetwork':
        return AdapterNetwork(self.layer_dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


@dataclass(eq=False)
class AdapterGradients:
    """Partial derivatives shaped like the adapter's parameters."""
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, net: AdapterNetwork) -> 'AdapterGradients':
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def parameters(self) -> List[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params


@dataclass(eq=False)
class SrplHead:
    """
    Reciprocal points, center points and radii. Rows 0..K-1 of rps/cps belong to
    the known speakers, rows K..K+M-1 to the synthesized pseudo-speakers.
    """
    rps: np.ndarray
    cps: np.ndarray
    radii: np.ndarray
    k_known: int
    m_syn: int = 0

    def __post_init__(self):
        if self.k_known < 2:
            raise InsufficientDataError(f"need at least 2 known classes, got {self.k_known}")
        if self.m_syn < 0:
            raise UsageError(f"m_syn must be >= 0, got {self.m_syn}")
        rows = self.k_known + self.m_syn
        if self.rps.ndim != 2 or self.rps.shape[0] != rows:
            raise UsageError(f"rps must have {rows} rows, got shape {self.rps.shape}")
        if self.cps.shape != self.rps.shape:
            raise UsageError(f"cps shape {self.cps.shape} differs from rps shape {self.rps.shape}")
        if self.radii.shape != (self.k_known,):
            raise UsageError(f"radii must have {self.k_known} entries, got shape {self.radii.shape}")
        if not (np.all(np.isfinite(self.rps)) and np.all(np.isfinite(self.cps))):
            raise UsageError("head points must be finite")
        if np.any(self.radii < 0) or not np.all(np.isfinite(self.radii)):
            raise UsageError("radii must be finite and non-negative")

    @property
    def dim(self) -> int:
        return self.rps.shape[1]

    def parameters(self) -> List[np.ndarray]:
        return [self.rps, self.cps, self.radii]

    def copy(self) -> 'SrplHead':
        return SrplHead(self.rps.copy(), self.cps.copy(), self.radii.copy(), self.k_known, self.m_syn)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


@dataclass(eq=False)
class HeadGradients:
    rps: np.ndarray
    cps: np.ndarray
    radii: np.ndarray

    @classmethod
    def zeros_like(cls, head: SrplHead) -> 'HeadGradients':
        return cls(np.zeros_like(head.rps), np.zeros_like(head.cps), np.zeros_like(head.radii))


@dataclass(eq=False)
class SoftmaxHead:
    """Linear K-way classifier on adapted embeddings (SoftmaxTune)."""
    weights: np.ndarray
    bias: np.ndarray

    def parameters(self) -> List[np.ndarray]:
        return [self.weights, self.bias]

    def copy(self) -> 'SoftmaxHead':
        return SoftmaxHead(self.weights.copy(), self.bias.copy())


@dataclass(eq=False)
class PrototypeHead:
    """Per-class mean prototypes of adapted embeddings (ProtoTypeTune)."""
    prototypes: np.ndarray

    def parameters(self) -> List[np.ndarray]:
        return [self.prototypes]

    def copy(self) -> 'PrototypeHead':
        return PrototypeHead(self.prototypes.copy())


@dataclass(eq=False)
class CosineHead:
    """Per-class mean of raw input embeddings scored by scaled cosine similarity."""
    centroids: np.ndarray
    scale: float

    def parameters(self) -> List[np.ndarray]:
        return [self.centroids]

    def copy(self) -> 'CosineHead':
        return CosineHead(self.centroids.copy(), self.scale)


@dataclass
class Hyperparameters:
    lambda_r: float = 1.0
    lambda_c: float = 1.0
    lambda_ns: float = 1.0
    # weight of the SynRP/SynCP terms that pseudo-labeled negatives add to L_s and L_c
    lambda_syn: float = 0.1
    learning_rate: float = 0.1
    epochs: int = 200
    # None trains full-batch
    batch_size: Optional[int] = 20
    logit_metric: str = METRIC_INNER
    syn_centers: bool = True
    radius_mode: str = RADIUS_PER_CLASS
    radius_init: float = 0.0

    def __post_init__(self):
        for name in ('lambda_r', 'lambda_c', 'lambda_ns', 'lambda_syn', 'radius_init'):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise UsageError(f"{name} must be a finite non-negative number, got {value}")
            setattr(self, name, value)
        self.learning_rate = float(self.learning_rate)
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise UsageError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if int(self.epochs) < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")
        self.epochs = int(self.epochs)
        if self.batch_size is not None and int(self.batch_size) < 1:
            raise UsageError(f"batch_size must be positive, got {self.batch_size}")
        if self.logit_metric not in LOGIT_METRICS:
            raise UsageError(f"unknown logit_metric '{self.logit_metric}'")
        if self.radius_mode not in RADIUS_MODES:
            raise UsageError(f"unknown radius_mode '{self.radius_mode}'")


@dataclass(frozen=True)
class LossBreakdown:
    """
    Per-term batch means. total = l_s + lambda_r*l_r + lambda_c*l_c - lambda_ns*h_neg.
    """
    l_s: float
    l_r: float
    l_c: float
    h_neg: float
    total: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class TrainConfig:
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    mode: str = MODE_SRPL
    seed: int = 0
    # None means width-preserving [D, D, D, D]
    adapter_dims: Optional[Sequence[int]] = None
    log_every: int = 10
    # Pseudo-class count when negatives are clustered instead of using their labels
    m_syn: int = 10
    cluster_negatives: bool = False
    adapter_init: str = ADAPTER_INIT_UNIFORM
    normalize_output: bool = False
    cosine_scale: float = 10.0

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise UsageError(f"unknown mode '{self.mode}', expected one of {sorted(TRAIN_MODES)}")
        if self.adapter_init not in ADAPTER_INITS:
            raise UsageError(f"unknown adapter_init '{self.adapter_init}'")
        if self.adapter_dims is not None:
            self.adapter_dims = tuple(int(d) for d in self.adapter_dims)
        if self.log_every < 1:
            raise UsageError(f"log_every must be >= 1, got {self.log_every}")
        if self.m_syn < 1:
            raise UsageError(f"m_syn must be >= 1, got {self.m_syn}")
        if not self.cosine_scale > 0:
            raise UsageError(f"cosine_scale must be positive, got {self.cosine_scale}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        if data['adapter_dims'] is not None:
            data['adapter_dims'] = list(data['adapter_dims'])
        return data


@dataclass(eq=False)
class EnrolledModel:
    """Trained adapter and head plus the class-index-to-speaker map."""
    mode: str
    adapter: Optional[AdapterNetwork]
    head: Any
    speaker_ids: List[str]
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    normalize_output: bool = False

    def __post_init__(self):
        if len(set(self.speaker_ids)) != len(self.speaker_ids):
            raise UsageError("speaker map must be a bijection over known classes")

    @property
    def n_classes(self) -> int:
        return len(self.speaker_ids)

    @property
    def input_dim(self) -> int:
        if self.adapter is not None:
            return self.adapter.input_dim
        return self.head.centroids.shape[1]


@dataclass(frozen=True)
class ScoredUtterance:
    confidence: float
    predicted_class: int
    true_class: int

    @property
    def is_target(self) -> bool:
        return self.true_class != OUTLIER

    @property
    def is_correct(self) -> bool:
        return self.true_class == self.predicted_class


@dataclass
class OpenSetReport:
    """Fractions in [0, 1]; curve rows are (TH, CCR, FPR) in ascending TH."""
    auc: float
    oscr: float
    closed_acc: float
    curve: List[Tuple[float, float, float]] = field(default_factory=list)
    # Adapted test embeddings (pandas DataFrame) when requested; never serialized with the report
    embeddings: Optional[Any] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'auc': self.auc,
            'oscr': self.oscr,
            'closed_acc': self.closed_acc,
            'curve': [list(point) for point in self.curve]
        }


@dataclass(frozen=True)
class ClusterSpec:
    n_speakers: int
    utterances_per_speaker: int
    dim: int
    within_spread: float
    between_spread: float
    seed: int = 0
    speaker_prefix: str = 'spk'


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seeds: Dict[str, int]
    input_digests: Dict[str, str]
    output_paths: List[str]
    duration_seconds: float
    started_at: str

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
