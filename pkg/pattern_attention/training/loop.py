# Copyright 2023 The pattern-attention Authors - All Rights Reserved
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


import os
import time
import logging
from collections import namedtuple
import numpy as np
import pandas as pd
from pattern_attention.errors import ConfigError, NonFiniteError
from pattern_attention.tensorcore import GradTape, cross_entropy
from pattern_attention.workers import run_ordered
from pattern_attention.model import Network, init_params
from pattern_attention.training.optim import OptimState, adamw_step, cosine_lr
from pattern_attention.training.data import SynthDataset, batch_indices
from pattern_attention.training.checkpoint import save_checkpoint, load_checkpoint

logger = logging.getLogger("pattern_attention")

METRIC_COLUMNS = ["step", "loss", "accuracy", "lr"]

TrainResult = namedtuple("TrainResult", ["params", "optimizer", "metrics", "evaluation"])

def _shard_bounds(batch_size, shards):
    size = batch_size // shards
    return [(n * size, (n + 1) * size) for n in range(shards)]

def shard_gradients(network, store, images, labels):
    """
    Returns (mean loss, correct predictions, gradient arrays in store order)
    for one shard, recorded on a tape owned by the calling thread.
    """
    with GradTape() as tape:
        logits = network.forward(store, images)
        loss = cross_entropy(logits, labels)
    grads = tape.gradient(loss, store.tensors())
    correct = int((logits.data.argmax(axis=1) == labels).sum())
    return loss.item(), correct, grads

def evaluate(store, config, dataset, indices, threads=1, network=None):
    """
    Returns {"accuracy", "loss", "samples"} of the model on the given
    dataset indices.
    """
    network = network or Network(config)
    indices = np.asarray(indices, dtype=np.int64)
    chunk = config.training.batch_size
    batches = [indices[n:n + chunk] for n in range(0, len(indices), chunk)]

    def run(batch):
        images, labels = dataset.batch(batch)
        logits = network.forward(store, images)
        loss = cross_entropy(logits, labels).item()
        return loss * len(batch), int((logits.data.argmax(axis=1) == labels).sum())

    results = run_ordered(run, batches, threads=threads, name="evaluate")
    total = float(len(indices)) or 1.0
    return {
        "accuracy": sum(r[1] for r in results) / total,
        "loss": sum(r[0] for r in results) / total,
        "samples": len(indices),
    }

def train(config, steps, dataset=None, seed=None, out_dir=None, resume=None, threads=1,
          stop_at=None):
    """
    Trains a model with AdamW and a cosine learning rate.

    Batch composition at every step is a pure function of (seed, step),
    and each batch is split into config.training.shards shards whose
    gradients are summed in shard order, so the loss series does not depend
    on `threads`. stop_at ends the run early without changing the
    `steps`-long schedule; with resume, training continues from a
    checkpoint's step and reproduces the unbroken run.

    With out_dir, writes metrics.csv, checkpoint.patc and config.json there.
    Returns a TrainResult.
    """
    seed = config.seed if seed is None else int(seed)
    training = config.training
    dataset = dataset or SynthDataset.for_config(config, seed=seed)
    network = Network(config)

    if resume is not None:
        checkpoint = load_checkpoint(resume)
        if checkpoint.config.to_dict() != config.to_dict():
            raise ConfigError("checkpoint {0} was written for a different config".format(resume))
        if checkpoint.steps != steps:
            raise ConfigError("checkpoint {0} belongs to a {1}-step schedule, not {2}".format(
                resume, checkpoint.steps, steps))
        store, state = checkpoint.params, checkpoint.optimizer
        logger.info("resuming from {0} at step {1}".format(resume, state.step))
    else:
        store = init_params(config, seed=seed, precision=32)
        state = OptimState.for_training(store, training)
    network.check(store)

    bounds = _shard_bounds(training.batch_size, training.shards)
    rows = []
    started = time.time()
    last = steps if stop_at is None else min(int(stop_at), steps)
    for step in range(state.step, last):
        indices = batch_indices(seed, step, training.batch_size, len(dataset))
        images, labels = dataset.batch(indices)
        results = run_ordered(
            lambda bound: shard_gradients(
                network, store, images[bound[0]:bound[1]], labels[bound[0]:bound[1]]),
            bounds, threads=threads, name="train_shard")

        weight = np.float32(1.0 / len(bounds))
        loss = sum(r[0] for r in results) / len(bounds)
        if not np.isfinite(loss):
            raise NonFiniteError("non-finite loss {0} at step {1}".format(loss, step))
        grads = {}
        for n, name in enumerate(store.names()):
            total = results[0][2][n] * weight
            for r in results[1:]:
                total = total + r[2][n] * weight
            grads[name] = total
        accuracy = sum(r[1] for r in results) / float(training.batch_size)

        lr = cosine_lr(training.lr, step, steps)
        adamw_step(store, grads, state, lr)
        rows.append((step, loss, accuracy, lr))
        if (step + 1) % training.log_every == 0 or step + 1 == last:
            logger.info("step {0}/{1} loss {2:.4f} accuracy {3:.3f} lr {4:.2e} ({5:.1f}s)".format(
                step + 1, steps, loss, accuracy, lr, time.time() - started))

    metrics = pd.DataFrame.from_records(rows, columns=METRIC_COLUMNS)
    eval_indices = np.arange(min(training.eval_samples, len(dataset)))
    evaluation = evaluate(store, config, dataset, eval_indices, threads=threads, network=network)
    logger.info("evaluation on {0} training samples: accuracy {1:.3f} loss {2:.4f}".format(
        evaluation["samples"], evaluation["accuracy"], evaluation["loss"]))

    if out_dir is not None:
        if not os.path.isdir(out_dir):
            os.makedirs(out_dir)
        metrics.to_csv(os.path.join(out_dir, "metrics.csv"), index=False)
        save_checkpoint(os.path.join(out_dir, "checkpoint.patc"), store, state, config, steps)
        with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as f:
            f.write(config.to_json())
    return TrainResult(store, state, metrics, evaluation)
