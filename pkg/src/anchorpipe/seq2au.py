"""Sequence-to-sequence translation from word vectors to per-frame AU+PS.

A single-layer LSTM encoder summarizes the sentence into h_enc; an LSTM-cell
decoder consumes [h_enc ; previous AU+PS] each step and emits a squashed 20-D
output (sigmoid AU, tanh pose) plus a stop logit that terminates the unroll.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .core import (
    AU_DIM,
    AUPS_DIM,
    AUPSVector,
    ContractError,
    EmptyInputError,
    SampleRecord,
    ShapeError,
)
from .text_frontend import EmbeddedSentence, EmbeddingTable, embed, tokenize


@dataclass
class EncoderState:
    """Sentence summary vector plus the per-step hiddens kept for diagnostics."""

    h_enc: torch.Tensor         # (B, H)
    step_hiddens: torch.Tensor  # (B, L, H), zero-padded past each length
    lengths: torch.Tensor       # (B,)


@dataclass
class DecoderStep:
    hidden: Tuple[torch.Tensor, torch.Tensor]  # LSTM (h, c), each (B, H)
    y: torch.Tensor                            # (B, 20), already squashed
    stop_logit: torch.Tensor                   # (B,)


class Seq2AUTranslator(nn.Module):
    """Encoder/decoder pair; all weights drawn from seeded uniform(-k, k), k=1/sqrt(H)."""

    def __init__(self, embed_dim: int = 200, hidden_size: int = 128,
                 seed: Optional[int] = None):
        super().__init__()
        self.embed_dim = embed_dim
        self.hidden_size = hidden_size
        self.encoder = nn.LSTM(embed_dim, hidden_size, batch_first=True)
        self.enc_proj = nn.Linear(hidden_size, hidden_size)
        self.cell = nn.LSTMCell(hidden_size + AUPS_DIM, hidden_size)
        self.dec_init_h = nn.Linear(hidden_size, hidden_size)
        self.dec_init_c = nn.Linear(hidden_size, hidden_size)
        self.head = nn.Linear(hidden_size, AUPS_DIM + 1)  # 20 outputs + stop logit
        if seed is not None:
            self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        k = 1.0 / math.sqrt(self.hidden_size)
        with torch.no_grad():
            for p in self.parameters():
                # uniform_ draws on CPU; params are CPU-resident in this pipeline
                p.data.uniform_(-k, k, generator=gen)

    # --- encoder -----------------------------------------------------------

    def encode_batch(self, vectors: torch.Tensor, lengths: torch.Tensor) -> EncoderState:
        if not torch.isfinite(vectors).all():
            raise ContractError("encoder input contains non-finite values")
        packed = pack_padded_sequence(
            vectors, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        out, (h_n, _) = self.encoder(packed)
        padded, _ = pad_packed_sequence(out, batch_first=True)
        return EncoderState(self.enc_proj(h_n[-1]), padded, lengths)

    # --- decoder -----------------------------------------------------------

    def initial_hidden(self, h_enc: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.dec_init_h(h_enc), self.dec_init_c(h_enc)

    def decode_step(self, prev: Optional[DecoderStep], h_enc: torch.Tensor,
                    y_prev: torch.Tensor) -> DecoderStep:
        """One autoregressive step; prev=None starts from the learned initial hidden."""
        if y_prev.shape[-1] != AUPS_DIM:
            raise ShapeError(f"y_prev must be {AUPS_DIM}-D, got {y_prev.shape}")
        hc = self.initial_hidden(h_enc) if prev is None else prev.hidden
        h, c = self.cell(torch.cat([h_enc, y_prev], dim=-1), hc)
        z = self.head(h)
        y = torch.cat([torch.sigmoid(z[:, :AU_DIM]), torch.tanh(z[:, AU_DIM:AUPS_DIM])], dim=-1)
        return DecoderStep((h, c), y, z[:, AUPS_DIM])

    def unroll(self, h_enc: torch.Tensor, steps: int,
               targets: Optional[torch.Tensor] = None,
               teacher_forcing_ratio: float = 1.0,
               rng: Optional[torch.Generator] = None):
        """Run `steps` decoder steps; returns (ys (B,T,20), stop_logits (B,T), hiddens (B,T,H)).

        With targets, step t feeds targets[:, t-1] as y_prev (teacher forcing);
        a ratio below 1 mixes in the model's own outputs, drawn per step.
        """
        bsz = h_enc.shape[0]
        y_prev = torch.zeros(bsz, AUPS_DIM, dtype=h_enc.dtype, device=h_enc.device)
        step: Optional[DecoderStep] = None
        ys, stops, hiddens = [], [], []
        for t in range(steps):
            step = self.decode_step(step, h_enc, y_prev)
            ys.append(step.y)
            stops.append(step.stop_logit)
            hiddens.append(step.hidden[0])
            if targets is not None:
                use_target = True
                if teacher_forcing_ratio < 1.0:
                    draw = torch.rand((), generator=rng)
                    use_target = bool(draw < teacher_forcing_ratio)
                y_prev = targets[:, t] if use_target else step.y
            else:
                y_prev = step.y
        return torch.stack(ys, 1), torch.stack(stops, 1), torch.stack(hiddens, 1)


def encode(sentence: EmbeddedSentence, model: Seq2AUTranslator) -> EncoderState:
    """Single-sentence encoder entry point."""
    dtype = next(model.parameters()).dtype
    vectors = torch.from_numpy(np.asarray(sentence.vectors)).to(dtype).unsqueeze(0)
    lengths = torch.tensor([len(sentence)], dtype=torch.int64)
    return model.encode_batch(vectors, lengths)


def infer(sentence: EmbeddedSentence, model: Seq2AUTranslator,
          t_max: int) -> List[AUPSVector]:
    """Free-running decode: emits one AU+PS per step until the stop flag fires
    (sigmoid > 0.5, i.e. positive logit) or t_max is reached."""
    if t_max < 1:
        raise ContractError("t_max must be >= 1")
    with torch.no_grad():
        state = encode(sentence, model)
        step: Optional[DecoderStep] = None
        y_prev = torch.zeros(1, AUPS_DIM, dtype=state.h_enc.dtype)
        out: List[AUPSVector] = []
        for _ in range(t_max):
            step = model.decode_step(step, state.h_enc, y_prev)
            out.append(AUPSVector.from_vector(step.y[0].numpy(), normalized=True))
            if step.stop_logit[0].item() > 0.0:
                break
            y_prev = step.y
    return out


# --- training --------------------------------------------------------------


class TrainableEmbeddings(nn.Module):
    """Optional fine-tunable word vectors over a fixed vocabulary."""

    def __init__(self, vocab: Sequence[str], table: EmbeddingTable):
        super().__init__()
        self.vocab = tuple(vocab)
        self.index = {w: i for i, w in enumerate(self.vocab)}
        weight = np.stack([table.lookup(w) for w in self.vocab])
        self.weight = nn.Parameter(torch.from_numpy(weight.astype(np.float32)))

    def ids_for(self, tokens: Sequence[str]) -> torch.Tensor:
        try:
            return torch.tensor([self.index[t] for t in tokens], dtype=torch.int64)
        except KeyError as e:
            raise ContractError(f"token {e.args[0]!r} not in the trained vocabulary")


@dataclass
class Seq2AUBatch:
    vectors: torch.Tensor         # (B, Lmax, E)
    lengths: torch.Tensor         # (B,)
    targets: torch.Tensor         # (B, Tmax, 20)
    target_lengths: torch.Tensor  # (B,)


def make_batch(records: Sequence[SampleRecord], table: EmbeddingTable, t_max: int,
               embeddings: Optional[TrainableEmbeddings] = None,
               dtype: torch.dtype = torch.float32) -> Seq2AUBatch:
    """Embed texts and pad AU+PS targets. Rejects sequences longer than t_max."""
    if not records:
        raise EmptyInputError("empty training batch")
    token_lists = [tokenize(r.text) for r in records]
    target_arrays = []
    for r in records:
        if r.num_frames > t_max:
            raise ShapeError(
                f"sample {r.id}: {r.num_frames} frames exceeds t_max={t_max}"
            )
        for v in r.aups_seq:
            if not v.normalized:
                raise ContractError(f"sample {r.id}: targets must be normalized")
        target_arrays.append(np.stack([v.vector() for v in r.aups_seq]))

    bsz = len(records)
    lmax = max(len(t) for t in token_lists)
    tmax = max(a.shape[0] for a in target_arrays)
    lengths = torch.tensor([len(t) for t in token_lists], dtype=torch.int64)
    target_lengths = torch.tensor([a.shape[0] for a in target_arrays], dtype=torch.int64)

    if embeddings is None:
        vectors = torch.zeros(bsz, lmax, table.dim, dtype=dtype)
        for i, toks in enumerate(token_lists):
            emb = embed(toks, table)
            vectors[i, : len(toks)] = torch.from_numpy(np.asarray(emb.vectors)).to(dtype)
    else:
        # gather through the parameter so gradients reach the word vectors;
        # padding rows reuse id 0 but are masked out by the packed encoder
        ids = torch.zeros(bsz, lmax, dtype=torch.int64)
        for i, toks in enumerate(token_lists):
            ids[i, : len(toks)] = embeddings.ids_for(toks)
        vectors = embeddings.weight[ids].to(dtype)

    targets = torch.zeros(bsz, tmax, AUPS_DIM, dtype=dtype)
    for i, a in enumerate(target_arrays):
        targets[i, : a.shape[0]] = torch.from_numpy(a).to(dtype)
    return Seq2AUBatch(vectors, lengths, targets, target_lengths)


def sequence_losses(model: Seq2AUTranslator, batch: Seq2AUBatch,
                    teacher_forcing_ratio: float = 1.0,
                    rng: Optional[torch.Generator] = None):
    """Teacher-forced unroll losses: masked MSE over the 20 outputs plus stop BCE.

    Both are averaged over valid steps only; the stop target is 1 at each
    sequence's final frame and 0 elsewhere.
    """
    state = model.encode_batch(batch.vectors, batch.lengths)
    tmax = batch.targets.shape[1]
    ys, stop_logits, _ = model.unroll(
        state.h_enc, tmax, targets=batch.targets,
        teacher_forcing_ratio=teacher_forcing_ratio, rng=rng,
    )
    steps = torch.arange(tmax).unsqueeze(0)
    mask = (steps < batch.target_lengths.unsqueeze(1)).to(ys.dtype)
    n_valid = mask.sum()

    sq = ((ys - batch.targets) ** 2).mean(dim=-1)
    mse = (sq * mask).sum() / n_valid

    stop_target = (steps == (batch.target_lengths - 1).unsqueeze(1)).to(ys.dtype)
    bce = F.binary_cross_entropy_with_logits(stop_logits, stop_target, reduction="none")
    stop_bce = (bce * mask).sum() / n_valid
    return mse, stop_bce


def train_step(model: Seq2AUTranslator, optimizer: torch.optim.Optimizer,
               batch: Seq2AUBatch, lambda_stop: float = 0.5,
               teacher_forcing_ratio: float = 1.0,
               rng: Optional[torch.Generator] = None) -> dict:
    """One optimizer update; returns {"mse", "stop_bce", "total"}."""
    mse, stop_bce = sequence_losses(model, batch, teacher_forcing_ratio, rng)
    total = mse + lambda_stop * stop_bce
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return {"mse": mse.item(), "stop_bce": stop_bce.item(), "total": total.item()}
