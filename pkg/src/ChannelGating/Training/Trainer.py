"""
Training loop: cross-entropy + λ·batch-shaping + L0, one Nesterov SGD step
per mini-batch, evaluation and a JSONL metric record per epoch, and
checkpoints every K epochs.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from ..Analytics.GateStats import classify_gates
from ..Analytics.GateTrace import GateTraceSet
from ..Datasets.BatchLoader import BatchLoader
from ..Datasets.DatasetSource import ImageSet
from ..Gating.GateModule import l0_loss
from ..Losses.BatchShaping import ShapingConfig, network_shaping_loss
from ..Losses.PriorSpec import PriorSpec
from ..Networks.GatedResNet import GatedResNet, gate_bits
from ..Networks.MacCounter import MacReport, mac_count
from ..Tensors import Functional as F
from ..Tensors import Tensor, backward, load_checkpoint, save_checkpoint
from .constants import CHECKPOINT_PATTERN, FAILURE_DUMP_FILE, METRICS_FILE, SHAPING_PRIOR
from .Optimizer import NesterovSGD
from .Schedule import TrainSchedule, learning_rate, loss_coefficients

logger = logging.getLogger("Trainer")

NOISE_STREAM = 2
EVAL_BATCH_SIZE = 256


class NonFiniteLossError(ArithmeticError):
    def __init__(self, message: str, terms: Dict[str, Any]):
        super().__init__(message)
        self.terms = terms


@dataclass
class StepMetrics:
    task_loss: float
    shaping_loss: float
    l0_loss: float
    total_loss: float
    gate_activity: float
    correct: int
    count: int


def train_step(
    model: GatedResNet,
    images: np.ndarray,
    labels: np.ndarray,
    optimizer: NesterovSGD,
    lam: float,
    gamma: float,
    rng: np.random.Generator,
    lr: Optional[float] = None,
    prior: Optional[PriorSpec] = None,
    clip_norm: Optional[float] = None,
) -> StepMetrics:
    """
    One update on one batch. Terms whose coefficient is 0 are left out of
    the loss altogether.
    """
    if not model.training:
        raise ValueError("train_step: model is in eval mode")
    prior = prior if prior is not None else PriorSpec.from_dict(SHAPING_PRIOR)
    optimizer.zero_grad()

    logits, gates = model(Tensor(images), rng=rng)
    task = F.cross_entropy(logits, labels)
    total = task
    shaping = regularizer = None
    if lam > 0 and gates:
        shaping = network_shaping_loss([g.soft for g in gates], ShapingConfig(prior=prior, lam=lam))
        total = total + shaping
    if gamma > 0 and gates:
        regularizer = l0_loss([g.logits for g in gates], gamma)
        total = total + regularizer

    terms = {
        "task_loss": task.item(),
        "shaping_loss": shaping.item() if shaping is not None else 0.0,
        "l0_loss": regularizer.item() if regularizer is not None else 0.0,
        "total_loss": total.item(),
        "lambda": lam,
        "gamma": gamma,
    }
    if not np.isfinite(terms["total_loss"]):
        raise NonFiniteLossError(f"train_step: non-finite loss {terms}", terms)

    backward(total)
    optimizer.step(lr=lr, clip_norm=clip_norm)

    activity = float(np.mean(gate_bits(gates))) if gates else 1.0
    correct = int(np.count_nonzero(logits.data.argmax(axis=1) == labels))
    return StepMetrics(
        task_loss=terms["task_loss"],
        shaping_loss=terms["shaping_loss"],
        l0_loss=terms["l0_loss"],
        total_loss=terms["total_loss"],
        gate_activity=activity,
        correct=correct,
        count=len(labels),
    )


@dataclass
class EvalResult:
    accuracy: float
    predictions: np.ndarray
    traces: GateTraceSet
    macs: MacReport

    def summary(self) -> Dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "examples": len(self.predictions),
            "average_macs": self.macs.average_conditional,
            "full_macs": self.macs.full,
            "dense_macs": self.macs.dense,
            "conditional_mac_fraction": self.macs.conditional_fraction,
        }


def evaluate(model: GatedResNet, data: ImageSet, batch_size: int = EVAL_BATCH_SIZE) -> EvalResult:
    """
    Eval-mode accuracy, gate traces and conditional MACs over a data set, in order.
    """
    model.eval()
    predictions, bits = [], []
    for images, _ in BatchLoader(data, batch_size, shuffle=False):
        logits, gates = model(Tensor(images))
        predictions.append(logits.data.argmax(axis=1))
        bits.append(gate_bits(gates) if gates else np.zeros((len(images), 0), dtype=np.uint8))
    predictions = np.concatenate(predictions)
    bits = np.concatenate(bits)

    report = mac_count(model, bits)
    traces = GateTraceSet(np.arange(len(data)), data.labels, bits, report.conditional, model.gate_widths())
    accuracy = float(np.mean(predictions == data.labels))
    logger.debug(f"evaluate: accuracy {accuracy:.4f}, {report.conditional_fraction:.3f} of full MACs")
    return EvalResult(accuracy=accuracy, predictions=predictions, traces=traces, macs=report)


def save_training_checkpoint(path: str | Path, model: GatedResNet, optimizer: NesterovSGD, epoch: int):
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    arrays.update({f"optimizer.{k}": v for k, v in optimizer.state_dict().items()})
    arrays["epoch"] = np.array([epoch])
    save_checkpoint(path, arrays)


def load_model_checkpoint(model: GatedResNet, path: str | Path, optimizer: Optional[NesterovSGD] = None) -> int:
    """
    Restores the model (and optimizer) state; returns the saved epoch.
    """
    arrays = load_checkpoint(path)
    model.load_state_dict({k.removeprefix("model."): v for k, v in arrays.items() if k.startswith("model.")})
    if optimizer is not None:
        optimizer.load_state_dict({k.removeprefix("optimizer."): v for k, v in arrays.items() if k.startswith("optimizer.")})
    return int(arrays["epoch"][0]) if "epoch" in arrays else -1


class Trainer:
    def __init__(
        self,
        model: GatedResNet,
        schedule: TrainSchedule,
        train: ImageSet,
        test: ImageSet,
        seed: int = 0,
        output: Optional[str | Path] = None,
        checkpoint_every: int = 0,
        workers: int = 0,
        prefetch: int = 2,
        prior: Optional[PriorSpec] = None,
        augment: bool = True,
    ):
        self.model = model
        self.schedule = schedule
        self.train_data, self.test_data = train, test
        self.seed = seed
        self.output = Path(output) if output is not None else None
        self.checkpoint_every = checkpoint_every
        self.workers, self.prefetch = workers, prefetch
        self.prior = prior if prior is not None else PriorSpec.from_dict(SHAPING_PRIOR)
        self.augment = augment
        self.optimizer = NesterovSGD(
            model.named_parameters(),
            lr=schedule.lr,
            momentum=schedule.momentum,
            weight_decay=schedule.weight_decay,
            gate_weight_decay=schedule.gate_weight_decay,
            nesterov=schedule.nesterov,
        )
        self.history: List[Dict[str, Any]] = []
        if self.output is not None:
            self.output.mkdir(parents=True, exist_ok=True)

    def loader(self, epoch: int) -> BatchLoader:
        loader = BatchLoader(
            self.train_data,
            self.schedule.batch_size,
            seed=self.seed,
            epoch=epoch,
            shuffle=True,
            augment=self.augment,
            workers=self.workers,
            prefetch=self.prefetch,
            drop_last=True,
        )
        if len(loader) == 0:
            raise ValueError(f"Trainer: {len(self.train_data)} training images is less than one batch of {self.schedule.batch_size}")
        return loader

    def train_epoch(self, epoch: int) -> Dict[str, Any]:
        self.model.train()
        loader = self.loader(epoch)
        rng = np.random.default_rng([self.seed, epoch, NOISE_STREAM])
        totals = {"task_loss": 0.0, "shaping_loss": 0.0, "l0_loss": 0.0, "gate_activity": 0.0}
        correct = count = 0
        lam, gamma = loss_coefficients(self.schedule, epoch)
        lr = learning_rate(self.schedule, epoch)
        for step, (images, labels) in enumerate(loader):
            if self.schedule.per_step:
                lam, gamma = loss_coefficients(self.schedule, epoch, step / len(loader))
            if self.schedule.lr_policy == "poly":
                lr = learning_rate(self.schedule, epoch, step, len(loader))
            try:
                m = train_step(
                    self.model, images, labels, self.optimizer, lam, gamma, rng,
                    lr=lr, prior=self.prior, clip_norm=self.schedule.clip_norm,
                )
            except NonFiniteLossError as e:
                self.dump_failure(epoch, step, e.terms)
                raise
            for key in totals:
                totals[key] += getattr(m, key) * m.count
            correct += m.correct
            count += m.count
            logger.debug(f"train_epoch: epoch {epoch} step {step} loss {m.total_loss:.4f}")

        record = {"epoch": epoch, "lr": lr, "lambda": lam, "gamma": gamma}
        record.update({key: value / count for key, value in totals.items()})
        record["train_accuracy"] = correct / count
        return record

    def dump_failure(self, epoch: int, step: int, terms: Dict[str, Any]):
        logger.error(f"dump_failure: non-finite loss at epoch {epoch} step {step}: {terms}")
        if self.output is not None:
            with open(self.output / FAILURE_DUMP_FILE, "w") as fp:
                json.dump({"epoch": epoch, "step": step, "terms": terms}, fp, indent=2)

    def run(self, start_epoch: int = 0) -> List[Dict[str, Any]]:
        logger.info(f"run: {self.model} for {self.schedule.epochs - start_epoch} epochs..")
        if self.output is not None and start_epoch == 0:
            (self.output / METRICS_FILE).unlink(missing_ok=True)
        for epoch in range(start_epoch, self.schedule.epochs):
            record = self.train_epoch(epoch)
            result = evaluate(self.model, self.test_data)
            record["test_accuracy"] = result.accuracy
            record["average_conditional_macs"] = result.macs.average_conditional
            record["conditional_mac_fraction"] = result.macs.conditional_fraction
            if result.traces.gate_count:
                record["gate_fractions"] = classify_gates(result.traces).overall
            self.history.append(record)
            self.write_record(record)
            logger.info(
                f"run: epoch {epoch}: test accuracy {result.accuracy:.4f}, "
                f"MACs {record['conditional_mac_fraction']:.3f} of full, λ={record['lambda']:.4g} γ={record['gamma']:.4g}"
            )
            last = epoch == self.schedule.epochs - 1
            if self.output is not None and (last or (self.checkpoint_every and (epoch + 1) % self.checkpoint_every == 0)):
                self.save(epoch)
        logger.info("run: ..done")
        return self.history

    def write_record(self, record: Dict[str, Any]):
        if self.output is None:
            return
        with open(self.output / METRICS_FILE, "a") as fp:
            fp.write(json.dumps(record) + "\n")

    def save(self, epoch: int) -> Path:
        path = self.output / CHECKPOINT_PATTERN.format(epoch=epoch)
        save_training_checkpoint(path, self.model, self.optimizer, epoch)
        logger.debug(f"save: {path}")
        return path

    def resume(self, path: str | Path) -> int:
        """
        Restores a checkpoint; returns the first epoch still to train.
        """
        return load_model_checkpoint(self.model, path, self.optimizer) + 1
