"""
Planted-fact model builder.

Builds a tiny transformer whose planted layer stores facts as single FFN
slots, so recall before and after unlearning can be measured exactly.

Construction:
- A seeded orthonormal basis gives one direction each for a constant bias
  feature, a null ("no answer") feature, every subject, relation and answer.
- Token embeddings are EMBED_SCALE * (bias + own direction); relation tokens
  also carry the null direction, which makes the null token the default
  prediction after a relation.
- Layer 0 attention averages uniformly over the causal prefix and copies the
  subject into the relation position. Every other attention block is zero.
- Each fact's key row is calibrated on measured FFN inputs: activation 1 on
  its own query, a small leak on a same-subject query, negative otherwise.
  Its value row writes the answer direction.
- One shared row fires on every query and suppresses the null answer. It
  fires SHARED_RETAIN_LIFT harder on queries whose subject is retain-only,
  so its mean forget activation stays below its mean retain activation and
  KVW leaves it untouched.
- Optional neighbor retain facts share a forget fact's subject.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from src.errors import ConfigurationError, ConstructionError, CorruptFileError
from src.model.config import Activation, ModelConfig
from src.model.forward import forward_with_trace
from src.model.serialization import load_model, save_model
from src.model.weights import DTYPE, LayerWeights, ModelWeights
from src.coefficients.dataset import TokenExample, save_dataset
from src.synth.facts import FactRole, FactSpec, queries, validate_facts
from src.synth.recall import evaluate_recall

logger = logging.getLogger(__name__)

EMBED_SCALE = 16.0
NOISE_SCALE = 0.02
DEFAULT_LEAK = 0.1
RELATION_MARGIN = 1.0
ANSWER_TO_NULL = 2.0
NULL_SUPPRESSION = 2.0 / 3.0
SHARED_RETAIN_LIFT = 0.1
DEFAULT_RELATIONS = 4
NULL_TOKEN = 0

MODEL_FILE = "model.kvw"
FORGET_FILE = "forget.jsonl"
RETAIN_FILE = "retain.jsonl"
MANIFEST_FILE = "suite.json"


@dataclass
class SynthSuite:
    """A planted-fact model with its forget and retain facts."""
    config: ModelConfig
    weights: ModelWeights
    forget_facts: List[FactSpec]
    retain_facts: List[FactSpec]
    seed: int
    planted_layer: int
    shared_slots: List[int] = field(default_factory=list)
    null_token: int = NULL_TOKEN
    model_path: Optional[Path] = None
    forget_dataset_path: Optional[Path] = None
    retain_dataset_path: Optional[Path] = None

    @property
    def facts(self) -> List[FactSpec]:
        return self.forget_facts + self.retain_facts

    @property
    def forget_dataset(self) -> List[TokenExample]:
        return queries(self.forget_facts)

    @property
    def retain_dataset(self) -> List[TokenExample]:
        return queries(self.retain_facts)

    def to_manifest(self) -> Dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "model": MODEL_FILE,
            "forget_dataset": FORGET_FILE,
            "retain_dataset": RETAIN_FILE,
            "seed": self.seed,
            "planted_layer": self.planted_layer,
            "shared_slots": list(self.shared_slots),
            "null_token": self.null_token,
            "forget_facts": [fact.to_dict() for fact in self.forget_facts],
            "retain_facts": [fact.to_dict() for fact in self.retain_facts],
        }

    def save(self, out_dir: Union[str, Path]) -> Path:
        """Write model, datasets and manifest into ``out_dir``; returns the manifest path."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.model_path = save_model(
            self.weights, self.config, out_dir / MODEL_FILE,
            metadata={"seed": self.seed, "planted_layer": self.planted_layer},
        )
        self.forget_dataset_path = save_dataset(self.forget_dataset, out_dir / FORGET_FILE)
        self.retain_dataset_path = save_dataset(self.retain_dataset, out_dir / RETAIN_FILE)

        manifest_path = out_dir / MANIFEST_FILE
        with open(manifest_path, "w") as f:
            json.dump(self.to_manifest(), f, indent=2, sort_keys=True)
        logger.info(f"Suite written to {out_dir}")
        return manifest_path

    @classmethod
    def load(cls, manifest_path: Union[str, Path]) -> "SynthSuite":
        """
        Load a suite written by :meth:`save`.

        Raises:
            CorruptFileError: The manifest is not JSON or misses a field.
        """
        manifest_path = Path(manifest_path)
        root = manifest_path.parent
        try:
            with open(manifest_path, "r") as f:
                manifest = json.load(f)
            model_path = root / manifest["model"]
            forget = [FactSpec.from_dict(d) for d in manifest["forget_facts"]]
            retain = [FactSpec.from_dict(d) for d in manifest["retain_facts"]]
            seed = int(manifest["seed"])
            planted_layer = int(manifest["planted_layer"])
            shared_slots = [int(s) for s in manifest.get("shared_slots", [])]
            null_token = int(manifest.get("null_token", NULL_TOKEN))
            forget_dataset_path = root / manifest["forget_dataset"]
            retain_dataset_path = root / manifest["retain_dataset"]
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise CorruptFileError(f"{manifest_path}: malformed suite manifest ({e!r})")
        validate_facts(forget + retain)
        weights, config = load_model(model_path)
        return cls(
            config=config,
            weights=weights,
            forget_facts=forget,
            retain_facts=retain,
            seed=seed,
            planted_layer=planted_layer,
            shared_slots=shared_slots,
            null_token=null_token,
            model_path=model_path,
            forget_dataset_path=forget_dataset_path,
            retain_dataset_path=retain_dataset_path,
        )


# =============================================================================
# Layout
# =============================================================================

def _check_capacity(n_forget: int, n_retain: int, n_neighbors: int, n_relations: int,
                    config: ModelConfig, planted_layer: int) -> None:
    if config.activation is not Activation.RELU or config.gated:
        raise ConfigurationError("facts can only be planted in a plain relu FFN")
    if n_forget < 0 or n_retain < 0:
        raise ConfigurationError("fact counts must be non-negative")
    if not 0 <= n_neighbors <= min(n_forget, n_retain):
        raise ConfigurationError(
            f"n_neighbors must lie in [0, {min(n_forget, n_retain)}], got {n_neighbors}"
        )
    if n_relations < (2 if n_neighbors else 1):
        raise ConfigurationError("neighbor facts need at least two relations")
    if not 0 <= planted_layer < config.num_layers:
        raise ConfigurationError(
            f"planted layer {planted_layer} outside a {config.num_layers}-layer model"
        )
    if config.max_seq_len < 3:
        raise ConfigurationError("queries need max_seq_len >= 3")

    n_facts = n_forget + n_retain
    if n_facts + 1 > config.ffn_dim:
        raise ConfigurationError(
            f"{n_facts} facts plus a shared row exceed ffn_dim={config.ffn_dim} in layer {planted_layer}"
        )
    n_subjects = n_facts - n_neighbors
    directions = 2 + n_subjects + n_relations + n_facts
    if directions > config.d_model:
        raise ConfigurationError(
            f"{directions} orthogonal directions needed but d_model={config.d_model}"
        )
    if 1 + n_subjects + n_relations + n_facts > config.vocab_size:
        raise ConfigurationError(f"vocab_size={config.vocab_size} too small for the suite")


def _layout_facts(
    n_forget: int, n_retain: int, n_neighbors: int,
    subjects: List[int], relations: List[int], answers: List[int],
    slots: List[int], planted_layer: int,
) -> List[FactSpec]:
    n_rel = len(relations)
    facts = []
    for i in range(n_forget):
        facts.append(FactSpec(
            fact_id=f"F{i:03d}",
            subject_token=subjects[i],
            relation_token=relations[i % n_rel],
            answer_token=answers[i],
            layer=planted_layer,
            slot=slots[i],
            strength=1.0,
            role=FactRole.FORGET,
            split=1 + i % 2,
        ))
    unique_subject = n_forget
    for k in range(n_retain):
        if k < n_neighbors:
            subject = subjects[k]
            relation = relations[(k % n_rel + 1) % n_rel]
            neighbor_of = f"F{k:03d}"
        else:
            subject = subjects[unique_subject]
            unique_subject += 1
            relation = relations[k % n_rel]
            neighbor_of = None
        facts.append(FactSpec(
            fact_id=f"R{k:03d}",
            subject_token=subject,
            relation_token=relation,
            answer_token=answers[n_forget + k],
            layer=planted_layer,
            slot=slots[n_forget + k],
            strength=1.0,
            role=FactRole.RETAIN,
            split=1 + k % 2,
            neighbor_of=neighbor_of,
        ))
    return facts


def _background(config: ModelConfig, rng: np.random.Generator) -> ModelWeights:
    d, m, v = config.d_model, config.ffn_dim, config.vocab_size

    def noise(*shape) -> np.ndarray:
        return (rng.standard_normal(shape) * NOISE_SCALE).astype(DTYPE)

    zeros = np.zeros((d, d), dtype=DTYPE)
    copy_gain = 2.0 * EMBED_SCALE * np.sqrt(2.0) / np.sqrt(d)
    layers = []
    for index in range(config.num_layers):
        first = index == 0
        layers.append(LayerWeights(
            attn_norm=np.ones(d, dtype=DTYPE),
            w_q=zeros.copy(),
            w_k=zeros.copy(),
            w_v=np.eye(d, dtype=DTYPE) if first else zeros.copy(),
            w_o=(np.eye(d) * copy_gain).astype(DTYPE) if first else zeros.copy(),
            ffn_norm=np.ones(d, dtype=DTYPE),
            ffn_key=noise(m, d),
            ffn_value=noise(m, d),
        ))
    return ModelWeights(
        embedding=noise(v, d),
        position=np.zeros((config.max_seq_len, d), dtype=DTYPE),
        layers=layers,
        final_norm=np.ones(d, dtype=DTYPE),
        unembedding=noise(v, d),
    )


# =============================================================================
# Builder
# =============================================================================

def build_synth_model(
    n_forget: int,
    n_retain: int,
    config: ModelConfig,
    seed: int = 0,
    planted_layer: Optional[int] = None,
    n_neighbors: Optional[int] = None,
    n_relations: int = DEFAULT_RELATIONS,
    leak: float = DEFAULT_LEAK,
    answer_ratio: float = ANSWER_TO_NULL,
) -> SynthSuite:
    """
    Build a planted-fact suite and verify it.

    Args:
        n_forget: Number of facts to forget.
        n_retain: Number of facts to retain (neighbors included).
        config: Model configuration; must be a plain relu FFN.
        seed: Seed for every random draw.
        planted_layer: Layer holding the facts (default: middle layer).
        n_neighbors: Retain facts sharing a forget fact's subject
            (default: min(n_forget, n_retain)).
        n_relations: Number of relation tokens.
        leak: Activation of a fact's slot on a same-subject query.
        answer_ratio: Answer weight relative to the residual null weight.

    Returns:
        SynthSuite with 100% pre-edit recall.

    Raises:
        ConfigurationError: The suite does not fit the model.
        ConstructionError: Recall or separability verification failed.
    """
    planted_layer = config.num_layers // 2 if planted_layer is None else planted_layer
    n_neighbors = min(n_forget, n_retain) if n_neighbors is None else n_neighbors
    _check_capacity(n_forget, n_retain, n_neighbors, n_relations, config, planted_layer)
    if not 0 <= leak < 1 or answer_ratio <= 1:
        raise ConfigurationError("leak must lie in [0, 1) and answer_ratio must exceed 1")

    rng = np.random.default_rng(seed)
    d = config.d_model
    n_facts = n_forget + n_retain
    n_subjects = n_facts - n_neighbors

    # Tokens and directions
    token_ids = rng.permutation(np.arange(1, config.vocab_size))
    cursor = 0

    def take(count: int) -> List[int]:
        nonlocal cursor
        chunk = [int(t) for t in token_ids[cursor:cursor + count]]
        cursor += count
        return chunk

    subjects, relations, answers = take(n_subjects), take(n_relations), take(n_facts)

    gaussian = rng.standard_normal((d, d))
    q, r = np.linalg.qr(gaussian)
    basis = (q * np.sign(np.diag(r))).T
    bias_dir, null_dir = basis[0], basis[1]
    direction: Dict[int, np.ndarray] = {}
    for offset, token in enumerate(subjects + relations + answers):
        direction[token] = basis[2 + offset]

    slots = [int(s) for s in rng.permutation(config.ffn_dim)[:n_facts + 1]]
    shared_slot = slots[n_facts]
    facts = _layout_facts(n_forget, n_retain, n_neighbors, subjects, relations, answers,
                          slots, planted_layer)
    validate_facts(facts)

    # Background weights and structured embeddings
    weights = _background(config, rng)
    for token in subjects + answers:
        weights.embedding[token] = EMBED_SCALE * (bias_dir + direction[token])
    for token in relations:
        weights.embedding[token] = EMBED_SCALE * (bias_dir + direction[token] + null_dir)
    for token in answers:
        weights.unembedding[token] = direction[token]
    weights.unembedding[NULL_TOKEN] = null_dir

    planted = weights.layers[planted_layer]
    for slot in slots:
        planted.ffn_key[slot] = 0.0
        planted.ffn_value[slot] = 0.0

    if facts:
        _plant(weights, config, facts, planted_layer, shared_slot, direction, bias_dir, null_dir,
               leak, answer_ratio)
        facts = _with_strengths(facts, weights, planted_layer)

    suite = SynthSuite(
        config=config,
        weights=weights,
        forget_facts=[f for f in facts if f.role is FactRole.FORGET],
        retain_facts=[f for f in facts if f.role is FactRole.RETAIN],
        seed=seed,
        planted_layer=planted_layer,
        shared_slots=[shared_slot] if facts else [],
    )
    verify_suite(suite)
    logger.info(
        f"Built suite: {n_forget} forget / {n_retain} retain facts in layer {planted_layer} (seed {seed})"
    )
    return suite


def _plant(weights, config, facts, layer, shared_slot, direction, bias_dir, null_dir,
           leak, answer_ratio) -> None:
    traces = [forward_with_trace(f.query(), weights, config, capture_hidden=True) for f in facts]
    inputs = [t.ffn_inputs[layer][1].astype(np.float64) for t in traces]
    finals = [t.final_hidden[1].astype(np.float64) for t in traces]

    p_subject = np.mean([u @ direction[f.subject_token] for u, f in zip(inputs, facts)])
    p_relation = np.mean([u @ direction[f.relation_token] for u, f in zip(inputs, facts)])
    p_bias = np.mean([u @ bias_dir for u in inputs])
    p_null = np.mean([u @ null_dir for u in inputs])
    null_raw = np.mean([h @ null_dir for h in finals])
    if min(p_subject, p_relation, p_bias, p_null, null_raw) <= 0:
        raise ConstructionError("calibration produced non-positive projections", [f.fact_id for f in facts])

    delta = RELATION_MARGIN
    subject_gain = (1.0 + delta) / p_subject
    relation_gain = (1.0 - leak) / p_relation
    bias_offset = (1.0 - leak + delta) / p_bias

    suppression = NULL_SUPPRESSION * null_raw
    answer_weight = answer_ratio * (null_raw - suppression)

    planted = weights.layers[layer]
    for fact, u in zip(facts, inputs):
        key = (subject_gain * direction[fact.subject_token]
               + relation_gain * direction[fact.relation_token]
               - bias_offset * bias_dir)
        own = u @ key
        if own <= 0:
            raise ConstructionError("key does not fire on its own query", [fact.fact_id])
        planted.ffn_key[fact.slot] = (key / own).astype(DTYPE)
        planted.ffn_value[fact.slot] = (answer_weight * direction[fact.answer_token]).astype(DTYPE)

    shared_key = 2.0 / p_null * null_dir - 1.0 / p_bias * bias_dir
    forget_subjects = {f.subject_token for f in facts if f.role is FactRole.FORGET}
    retain_only = sorted({f.subject_token for f in facts} - forget_subjects)
    for token in retain_only:
        shared_key = shared_key + SHARED_RETAIN_LIFT / p_subject * direction[token]
    planted.ffn_key[shared_slot] = shared_key.astype(DTYPE)
    planted.ffn_value[shared_slot] = (-suppression * null_dir).astype(DTYPE)


def _with_strengths(facts: List[FactSpec], weights: ModelWeights, layer: int) -> List[FactSpec]:
    value = weights.layers[layer].ffn_value
    return [
        replace(fact, strength=float(np.linalg.norm(value[fact.slot].astype(np.float64))))
        for fact in facts
    ]


def verify_suite(suite: SynthSuite) -> None:
    """
    Check full pre-edit recall and that every forget slot is more active on
    forget queries than on retain queries.
    """
    recall = evaluate_recall(suite.weights, suite.facts, suite.config)
    if recall.misses:
        raise ConstructionError("pre-edit recall check failed", recall.misses)
    if not suite.forget_facts:
        return

    def slot_rows(facts: List[FactSpec]) -> np.ndarray:
        if not facts:
            return np.zeros((1, suite.config.ffn_dim))
        rows = []
        for fact in facts:
            query = fact.query()
            trace = forward_with_trace(query, suite.weights, suite.config)
            position = int(query.selected_positions(ans_only=True)[0])
            rows.append(trace.coefficients[suite.planted_layer][position].astype(np.float64))
        return np.stack(rows)

    forget_rows = slot_rows(suite.forget_facts)
    forget_mean = forget_rows.mean(axis=0)
    retain_mean = slot_rows(suite.retain_facts).mean(axis=0)
    weak = [f.fact_id for f in suite.forget_facts if forget_mean[f.slot] <= retain_mean[f.slot]]
    if weak:
        raise ConstructionError("forget slots are not separable from retain activity", weak)
    for slot in suite.shared_slots:
        if forget_rows[:, slot].max() > retain_mean[slot]:
            logger.warning(
                f"Shared slot {slot} fires harder on some forget query than on retain queries "
                f"({forget_rows[:, slot].max():.6f} > {retain_mean[slot]:.6f}); KVW will weaken it"
            )
