"""Multi-modal set fusion models.

Each modality is encoded to a common dimension D, the encoded instances are
pooled as an unordered set (sum/max/min/mean), and an MLP predicts class
logits from the pooled vector. Max/min pooling additionally tracks, per
pooled dimension, which modality supplied the extremum; the resulting
argmax-count fractions are the per-sample feature importance.

A fixed-slot concatenation baseline is included for comparison: every
modality gets a constant number of slots, missing slots are zero blocks,
and extra instances are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import EmptySetError
from .seeding import derive_rng
from .training import init_classifier_bias

DENSE = "dense"
INDEX_SEQUENCE = "index_sequence"
DEFAULT_KERNEL_WIDTHS = (2, 3, 4)
PAD_INDEX = 0


@dataclass(frozen=True)
class ModalitySpec:
    """Declaration of one feature modality.

    Dense modalities carry float vectors of length ``input_dim``; index
    sequences carry int vectors with values in [0, vocab_size). At most
    ``max_instances`` occurrences per sample enter the set; extras are
    subsampled away.
    """

    modality_id: str
    kind: str
    input_dim: int | None = None
    vocab_size: int | None = None
    max_instances: int = 10

    def __post_init__(self):
        if not self.modality_id:
            raise ValueError("modality_id must be a nonempty string")
        if self.kind == DENSE:
            if not self.input_dim or self.input_dim < 1:
                raise ValueError(f"dense modality {self.modality_id!r} needs input_dim >= 1")
        elif self.kind == INDEX_SEQUENCE:
            if not self.vocab_size or self.vocab_size < 1:
                raise ValueError(
                    f"index_sequence modality {self.modality_id!r} needs vocab_size >= 1"
                )
        else:
            raise ValueError(f"unknown modality kind {self.kind!r}")
        if self.max_instances < 1:
            raise ValueError("max_instances must be >= 1")

    def to_dict(self) -> dict:
        d = {"modality_id": self.modality_id, "kind": self.kind,
             "max_instances": self.max_instances}
        if self.kind == DENSE:
            d["input_dim"] = self.input_dim
        else:
            d["vocab_size"] = self.vocab_size
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModalitySpec":
        return cls(modality_id=d["modality_id"], kind=d["kind"],
                   input_dim=d.get("input_dim"), vocab_size=d.get("vocab_size"),
                   max_instances=d.get("max_instances", 10))


@dataclass
class ImportanceRecord:
    """Per-sample attribution: how many of the D pooled dimensions each
    modality won under extremum pooling."""

    sample_id: str
    counts: dict[str, int]
    fractions: dict[str, float]

    @classmethod
    def from_counts(cls, sample_id: str, counts: dict[str, int]) -> "ImportanceRecord":
        total = sum(counts.values())
        return cls(sample_id=sample_id, counts=dict(counts),
                   fractions={m: c / total for m, c in counts.items()})


def _canonical_payload_key(payload: np.ndarray) -> bytes:
    return payload.tobytes()


def build_set(sample, specs, rng=None):
    """Canonically ordered (modality_id, payload) elements of a sample.

    Instances are grouped by modality, ordered by payload content, and
    subsampled without replacement down to the modality's cap. Keying the
    order on content (not on storage position) makes the element list, and
    therefore every downstream pooling reduction, independent of the order
    in which instances arrived; subsampling picks positions in the sorted
    list, so it inherits the same independence.

    When ``rng`` is None the stream used by inference forwards is derived
    from the sample id, so a standalone call reproduces exactly the set an
    eval-mode forward sees. Instances of modalities absent from ``specs``
    are ignored. Raises EmptySetError when nothing usable remains.
    """
    spec_by_id = {spec.modality_id: spec for spec in specs}
    grouped: dict[str, list[np.ndarray]] = {mid: [] for mid in spec_by_id}
    for inst in sample.instances:
        if inst.modality_id in grouped:
            grouped[inst.modality_id].append(inst.payload)
    elements = []
    for mid in sorted(grouped):
        payloads = sorted(grouped[mid], key=_canonical_payload_key)
        cap = spec_by_id[mid].max_instances
        if len(payloads) > cap:
            if rng is None:
                rng = derive_rng("eval", sample.sample_id)
            keep = rng.choice(len(payloads), size=cap, replace=False)
            payloads = [payloads[i] for i in sorted(keep)]
        elements.extend((mid, p) for p in payloads)
    if not elements:
        raise EmptySetError("no usable instances after filtering to known modalities",
                            sample_id=sample.sample_id)
    return elements


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[:-1]))
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class DenseEncoder:
    """Single FC layer with ELU and dropout: [1,M] -> [1,D]."""

    def __init__(self, spec: ModalitySpec, dim: int, dropout_p: float,
                 rng: np.random.Generator):
        self.spec = spec
        self.dropout_p = dropout_p
        self.weight = T.parameter(_uniform_init(rng, (spec.input_dim, dim)))
        self.bias = T.parameter(np.zeros((1, dim)))

    def encode(self, payload: np.ndarray, training: bool, rng) -> T.Tensor:
        x = np.asarray(payload, dtype=np.float64)
        if x.shape != (self.spec.input_dim,):
            raise ValueError(
                f"modality {self.spec.modality_id!r} expects a vector of length "
                f"{self.spec.input_dim}, got shape {x.shape}"
            )
        h = T.elu(T.add(T.matmul(T.Tensor(x[None, :]), self.weight), self.bias))
        return T.dropout(h, self.dropout_p, training, rng)

    def named_parameters(self, prefix: str) -> dict[str, T.Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class SequenceEncoder:
    """Index-sequence encoder: lookup table, multi-width 1-D convolutions
    with max-over-time, then a projection to the common dimension.

    Sequences shorter than the widest kernel are right-padded with the
    reserved index 0 so the convolution is always defined.
    """

    def __init__(self, spec: ModalitySpec, dim: int, embed_dim: int, num_filters: int,
                 kernel_widths: tuple[int, ...], dropout_p: float,
                 rng: np.random.Generator):
        self.spec = spec
        self.dropout_p = dropout_p
        self.kernel_widths = tuple(kernel_widths)
        self.embedding = T.parameter(_uniform_init(rng, (spec.vocab_size, embed_dim)))
        self.kernels = {
            w: T.parameter(_uniform_init(rng, (w, embed_dim, num_filters)))
            for w in self.kernel_widths
        }
        self.projection = T.parameter(
            _uniform_init(rng, (len(self.kernel_widths) * num_filters, dim))
        )
        self.bias = T.parameter(np.zeros((1, dim)))

    def encode(self, payload: np.ndarray, training: bool, rng) -> T.Tensor:
        idx = np.asarray(payload)
        if idx.ndim != 1 or idx.size == 0 or not np.issubdtype(idx.dtype, np.integer):
            raise ValueError(
                f"modality {self.spec.modality_id!r} expects a nonempty int sequence"
            )
        if idx.min() < 0 or idx.max() >= self.spec.vocab_size:
            raise ValueError(
                f"modality {self.spec.modality_id!r}: index out of range "
                f"[0, {self.spec.vocab_size})"
            )
        pad_to = max(self.kernel_widths)
        if idx.size < pad_to:
            idx = np.concatenate([idx, np.full(pad_to - idx.size, PAD_INDEX, dtype=idx.dtype)])
        emb = T.embedding_lookup(self.embedding, idx)
        pooled = []
        for w in self.kernel_widths:
            conv = T.conv1d_over_sequence(emb, self.kernels[w])
            best, _ = T.reduce_over_set(conv, "max")
            pooled.append(best)
        h = T.elu(T.add(T.matmul(T.concat_cols(pooled), self.projection), self.bias))
        return T.dropout(h, self.dropout_p, training, rng)

    def named_parameters(self, prefix: str) -> dict[str, T.Tensor]:
        params = {f"{prefix}.embedding": self.embedding}
        for w in self.kernel_widths:
            params[f"{prefix}.conv{w}"] = self.kernels[w]
        params[f"{prefix}.projection"] = self.projection
        params[f"{prefix}.bias"] = self.bias
        return params


class Mlp:
    """Plain MLP with ELU hidden activations and a linear output layer."""

    def __init__(self, sizes, rng, final_bias: np.ndarray | None = None):
        self.weights = []
        self.biases = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.weights.append(T.parameter(_uniform_init(rng, (a, b))))
            last = i == len(sizes) - 2
            bias = final_bias if (last and final_bias is not None) else np.zeros((1, b))
            self.biases.append(T.parameter(np.array(bias, dtype=np.float64)))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = T.add(T.matmul(x, w), b)
            if i != last:
                x = T.elu(x)
        return x

    def named_parameters(self, prefix: str) -> dict[str, T.Tensor]:
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"{prefix}.{i}.weight"] = w
            params[f"{prefix}.{i}.bias"] = b
        return params


def _build_encoders(specs, dim, embed_dim, num_filters, kernel_widths, dropout_p, rng):
    encoders = {}
    for spec in sorted(specs, key=lambda s: s.modality_id):
        if spec.kind == DENSE:
            encoders[spec.modality_id] = DenseEncoder(spec, dim, dropout_p, rng)
        else:
            encoders[spec.modality_id] = SequenceEncoder(
                spec, dim, embed_dim, num_filters, kernel_widths, dropout_p, rng
            )
    return encoders


def _check_specs(specs):
    ids = [s.modality_id for s in specs]
    if not ids:
        raise ValueError("a model needs at least one modality")
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate modality ids: {sorted(ids)}")


class FusionModel:
    """Set fusion model: per-modality encoders, pooling, predictor."""

    def __init__(self, specs, num_classes: int, dim: int = 32, pool: str = "max",
                 predictor_hidden=(32,), embed_dim: int = 16, num_filters: int = 16,
                 kernel_widths=DEFAULT_KERNEL_WIDTHS, dropout_p: float = 0.25,
                 class_prior: float = 0.01, seed: int = 0):
        _check_specs(specs)
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.specs = tuple(sorted(specs, key=lambda s: s.modality_id))
        self.modality_ids = tuple(s.modality_id for s in self.specs)
        self.num_classes = num_classes
        self.dim = dim
        self.pool = pool
        self.predictor_hidden = tuple(predictor_hidden)
        self.embed_dim = embed_dim
        self.num_filters = num_filters
        self.kernel_widths = tuple(kernel_widths)
        self.dropout_p = dropout_p
        self.class_prior = class_prior
        self.seed = seed
        rng = derive_rng(seed, "init")
        self.encoders = _build_encoders(self.specs, dim, embed_dim, num_filters,
                                        self.kernel_widths, dropout_p, rng)
        self.predictor = Mlp([dim, *self.predictor_hidden, num_classes], rng,
                             final_bias=init_classifier_bias(num_classes, class_prior))
        self._mod_index = {m: i for i, m in enumerate(self.modality_ids)}

    @property
    def pool(self) -> str:
        return self._pool

    @pool.setter
    def pool(self, mode: str) -> None:
        # switching the pooling mode is legal (it owns no parameters)
        if mode not in T.POOL_MODES:
            raise ValueError(f"pool must be one of {T.POOL_MODES}, got {mode!r}")
        self._pool = mode

    def forward(self, sample, training: bool = False, rng=None):
        """Encode, pool, predict. Returns (logits [1,C], importance record).

        The importance record is populated only under max/min pooling; sum
        and mean carry no per-dimension attribution, so they return None.
        When no rng is given (inference), a stream derived from the sample
        id is used, so repeated calls are bit-identical.
        """
        if rng is None:
            if training:
                raise ValueError("training forward needs an rng")
            rng = derive_rng("eval", sample.sample_id)
        elements = build_set(sample, self.specs, rng)
        rows = []
        owners = np.empty(len(elements), dtype=np.int64)
        for i, (mid, payload) in enumerate(elements):
            rows.append(self.encoders[mid].encode(payload, training, rng))
            owners[i] = self._mod_index[mid]
        pooled, argidx = T.reduce_over_set(T.stack_rows(rows), self.pool)
        record = None
        if argidx is not None:
            won = np.bincount(owners[argidx], minlength=len(self.modality_ids))
            counts = {m: int(won[i]) for i, m in enumerate(self.modality_ids)}
            record = ImportanceRecord.from_counts(sample.sample_id, counts)
        return self.predictor(pooled), record

    def named_parameters(self) -> dict[str, T.Tensor]:
        params = {}
        for mid in self.modality_ids:
            params.update(self.encoders[mid].named_parameters(f"encoder.{mid}"))
        params.update(self.predictor.named_parameters("predictor"))
        return params

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())


class ConcatModel:
    """Fixed-slot concatenation baseline.

    Every modality owns ``slots[modality_id]`` encoder slots (default: its
    max_instances). Instances fill slots in arrival order, missing slots are
    exact zero blocks, and extra instances are dropped. The concatenated
    [1, sum(slots)*D] vector feeds an MLP. Deliberately not permutation
    invariant.
    """

    def __init__(self, specs, num_classes: int, dim: int = 32, slots=None,
                 predictor_hidden=(32,), embed_dim: int = 16, num_filters: int = 16,
                 kernel_widths=DEFAULT_KERNEL_WIDTHS, dropout_p: float = 0.25,
                 class_prior: float = 0.01, seed: int = 0):
        _check_specs(specs)
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.specs = tuple(sorted(specs, key=lambda s: s.modality_id))
        self.modality_ids = tuple(s.modality_id for s in self.specs)
        self.num_classes = num_classes
        self.dim = dim
        self.slots = dict(slots) if slots else {s.modality_id: s.max_instances
                                                for s in self.specs}
        if set(self.slots) != set(self.modality_ids):
            raise ValueError("slots must cover exactly the model's modalities")
        self.predictor_hidden = tuple(predictor_hidden)
        self.embed_dim = embed_dim
        self.num_filters = num_filters
        self.kernel_widths = tuple(kernel_widths)
        self.dropout_p = dropout_p
        self.class_prior = class_prior
        self.seed = seed
        rng = derive_rng(seed, "init")
        self.encoders = _build_encoders(self.specs, dim, embed_dim, num_filters,
                                        self.kernel_widths, dropout_p, rng)
        self.concat_dim = sum(self.slots.values()) * dim
        self.predictor = Mlp([self.concat_dim, *self.predictor_hidden, num_classes], rng,
                             final_bias=init_classifier_bias(num_classes, class_prior))

    def forward(self, sample, training: bool = False, rng=None):
        """Returns (logits [1,C], None); padding makes every sample total."""
        if rng is None:
            if training:
                raise ValueError("training forward needs an rng")
            rng = derive_rng("eval", sample.sample_id)
        parts = []
        for spec in self.specs:
            mid = spec.modality_id
            got = [inst.payload for inst in sample.instances if inst.modality_id == mid]
            got = got[: self.slots[mid]]
            for payload in got:
                parts.append(self.encoders[mid].encode(payload, training, rng))
            for _ in range(self.slots[mid] - len(got)):
                parts.append(T.Tensor(np.zeros((1, self.dim))))
        return self.predictor(T.concat_cols(parts)), None

    def named_parameters(self) -> dict[str, T.Tensor]:
        params = {}
        for mid in self.modality_ids:
            params.update(self.encoders[mid].named_parameters(f"encoder.{mid}"))
        params.update(self.predictor.named_parameters("predictor"))
        return params

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())


def aggregate_importance(records) -> dict[str, float]:
    """Mean per-modality importance fraction over a list of records."""
    if not records:
        raise ValueError("cannot aggregate an empty list of importance records")
    totals: dict[str, float] = {}
    for rec in records:
        for mid, frac in rec.fractions.items():
            totals[mid] = totals.get(mid, 0.0) + frac
    return {mid: totals[mid] / len(records) for mid in sorted(totals)}
