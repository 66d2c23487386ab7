"""
Experiment commands: train, eval, bench, analyze, gradcheck and export.

Each command reads the experiment config, writes its artifacts under the
output directory and returns a process exit status.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np

from .Analytics import (
    check_macs,
    class_selective_gates,
    classify_gates,
    export_all,
    gate_rows,
    mac_ranking,
    per_class_firing,
    read_trace,
    write_trace,
)
from .Analytics.constants import OFF_THRESHOLD, ON_THRESHOLD
from .Analytics.Export import load_summaries
from .Gating.GateModule import GateModule, l0_loss
from .Inference.Bench import ACTIVITY_LEVELS, bench, format_table
from .Losses.BatchShaping import ShapingConfig, shaping_loss
from .Losses.PriorSpec import PriorSpec
from .Networks.BlockConfig import GatedBlockConfig
from .Networks.GatedBlock import GatedBlock
from .Networks.GatedResNet import GatedResNet, build_network
from .Tensors import Functional as F
from .Tensors import Tensor, precision
from .Tensors.constants import FD_RTOL_64
from .Tensors.Gradcheck import GradcheckResult, check_gradients
from .Training import ExperimentConfig, Trainer, dump_config, evaluate, load_config, load_model_checkpoint, schedule_table
from .constants import (
    ANALYSIS_FILE,
    BENCH_EXAMPLES,
    BENCH_JSON_FILE,
    BENCH_TABLE_FILE,
    CONFIG_COPY_FILE,
    EXPORT_DIRECTORY,
    GATES_CSV_FILE,
    GRADCHECK_FILE,
    SUMMARY_FILE,
    TOP_K,
    TRACE_FILE,
)

logger = logging.getLogger("ExperimentManager")

GRADCHECK_SAMPLES = 24


def parse_thresholds(text: str) -> Tuple[float, float]:
    """
    "on,off" → (on, off).
    """
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"--thresholds: expected 'on,off', got '{text}'")
    try:
        on, off = float(parts[0]), float(parts[1])
    except ValueError as e:
        raise ValueError(f"--thresholds: expected two numbers, got '{text}'") from e
    if not 0.0 <= off < on <= 1.0:
        raise ValueError(f"--thresholds: need 0 <= off < on <= 1, got on={on}, off={off}")
    return on, off


def _write_json(path: Path, data: Any):
    with open(path, "w") as fp:
        json.dump(data, fp, indent=2, sort_keys=True)
        fp.write("\n")


def gradcheck_suite(seed: int = 0) -> List[GradcheckResult]:
    """
    Finite-difference checks in 64-bit mode: every differentiable primitive,
    the batch-shaping loss under three priors, the L0 loss, and a gated
    block with fixed gates.
    """
    rng = np.random.default_rng(seed)
    results = []

    def check(name: str, fn: Callable[[], Tensor], tensors: Sequence[Tensor], samples: Optional[int] = GRADCHECK_SAMPLES):
        results.append(check_gradients(name, fn, tensors, FD_RTOL_64, samples=samples, seed=seed))

    def param(*shape: int, scale: float = 1.0) -> Tensor:
        return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)

    with precision():
        x = param(2, 3, 6, 6)
        w = param(4, 3, 3, 3, scale=0.5)
        r = rng.normal(size=(2, 4, 3, 3))
        check("conv2d", lambda: (F.conv2d(x, w, 2, 1) * r).sum(), [x, w])

        scale, shift = param(4), param(4)
        y = param(5, 4, 3, 3)
        r = rng.normal(size=y.shape)
        check(
            "batch_norm",
            lambda: (F.batch_norm(y, scale, shift, np.zeros(4), np.ones(4), training=True) * r).sum(),
            [y, scale, shift],
        )

        p = param(2, 3, 7, 7)
        r = rng.normal(size=(2, 3, 4, 4))
        check("max_pool2d", lambda: (F.max_pool2d(p, 3, 2, 1) * r).sum(), [p])

        v = param(4, 5)
        r = rng.normal(size=v.shape)
        check("relu", lambda: (F.relu(v) * r).sum(), [v], samples=None)
        check("sigmoid", lambda: (F.sigmoid(v) * r).sum(), [v], samples=None)

        a, wa, ba = param(3, 5), param(6, 5), param(6)
        r = rng.normal(size=(3, 6))
        check("affine", lambda: (F.affine(a, wa, ba) * r).sum(), [a, wa, ba])

        g = param(2, 3, 4, 4)
        r = rng.normal(size=(2, 3))
        check("global_avg_pool", lambda: (F.global_avg_pool(g) * r).sum(), [g])

        m = param(2, 3)
        r = rng.normal(size=g.shape)
        check("channel_mul", lambda: (F.channel_mul(g, m) * r).sum(), [g, m])

        logits = param(6, 4)
        labels = rng.integers(0, 4, size=6)
        check("cross_entropy", lambda: F.cross_entropy(logits, labels), [logits], samples=None)

        s = param(7, 3)
        r = rng.normal(size=s.shape)
        check("sort", lambda: (F.sort_with_indices(s, axis=0)[0] * r).sum(), [s], samples=None)

        for prior in (PriorSpec.uniform(), PriorSpec.gaussian(0.0, 1.0), PriorSpec.beta(0.6, 0.4)):
            for n in (5, 32):
                samples = Tensor(rng.uniform(0.05, 0.95, size=(n, 2)), requires_grad=True)
                config = ShapingConfig(prior=prior, lam=1.0)
                check(f"shaping[{prior.kind},N={n}]", lambda: shaping_loss(samples, config), [samples])

        z = param(4, 6)
        check("l0_loss", lambda: l0_loss(z, 0.1), [z], samples=None)

        gate = GateModule(3, 4, rng=rng)
        gate.train()
        noise = rng.logistic(size=(5, 4))
        gx = param(5, 3, 4, 4)
        check("gate_soft", lambda: gate(gx, noise=noise).soft.sum(), [gx, gate.fc1.weight, gate.fc2.weight])

        block = GatedBlock(GatedBlockConfig.make(4, 6, 4), rng=rng)
        block.train()
        bx = param(3, 4, 5, 5)
        force = (rng.uniform(size=(3, 6)) < 0.5).astype(np.float64)
        block_noise = rng.logistic(size=(3, 6))
        r = rng.normal(size=(3, 4, 5, 5))
        check(
            "gated_block",
            lambda: (block(bx, noise=block_noise, force=force)[0] * r).sum(),
            [bx, block.conv1.weight, block.conv2.weight, block.bn1.scale],
        )
    return results


class ExperimentManager:
    """
    Runs one command against an experiment config. Flags given on the
    command line override the config file.
    """

    def __init__(
        self,
        config: Optional[ExperimentConfig] = None,
        config_path: Optional[str] = None,
        seed: Optional[int] = None,
        gamma: Optional[float] = None,
        lam: Optional[float] = None,
        out: Optional[str] = None,
        checkpoint: Optional[str] = None,
        gamma_index: Optional[int] = None,
    ):
        if config is None:
            config = load_config(config_path) if config_path is not None else ExperimentConfig()
        self.has_config = config_path is not None
        self.config = config.with_overrides(seed=seed, gamma=gamma, lam=lam, output=out, gamma_index=gamma_index)
        self.checkpoint = checkpoint
        self.output = Path(self.config.output)

    def run(self, command: str, **options: Any) -> int:
        handler = getattr(self, f"cmd_{command}", None)
        if handler is None:
            raise ValueError(f"ExperimentManager: unknown command '{command}'")
        logger.debug(f"run: {command}..")
        status = handler(**options)
        logger.debug(f"run: ..{command} done, status {status}")
        return status

    def model(self) -> GatedResNet:
        model = build_network(self.config.model, self.config.seed)
        if self.checkpoint is not None:
            epoch = load_model_checkpoint(model, self.checkpoint)
            logger.info(f"model: restored {self.checkpoint} (epoch {epoch})")
        else:
            logger.warning("model: no checkpoint given, using freshly initialized weights")
        return model

    def prepare_output(self) -> Path:
        self.output.mkdir(parents=True, exist_ok=True)
        return self.output

    def cmd_train(self, **_: Any) -> int:
        out = self.prepare_output()
        dump_config(self.config, out / CONFIG_COPY_FILE)
        train, test = self.config.data.load()
        model = build_network(self.config.model, self.config.seed)
        trainer = Trainer(
            model,
            self.config.schedule,
            train,
            test,
            seed=self.config.seed,
            output=out,
            checkpoint_every=self.config.checkpoint_every,
            workers=self.config.workers,
            prefetch=self.config.prefetch,
            prior=self.config.prior,
        )
        start = trainer.resume(self.checkpoint) if self.checkpoint is not None else 0
        history = trainer.run(start)
        if history:
            last = history[-1]
            logger.info(f"cmd_train: final test accuracy {last['test_accuracy']:.4f}")
        return 0

    def cmd_eval(self, **_: Any) -> int:
        out = self.prepare_output()
        _, test = self.config.data.load()
        model = self.model()
        result = evaluate(model, test)
        write_trace(out / TRACE_FILE, result.traces)
        summary = result.summary()
        summary["checkpoint"] = self.checkpoint
        summary["seed"] = self.config.seed
        _write_json(out / SUMMARY_FILE, summary)
        logger.info(
            f"cmd_eval: accuracy {result.accuracy:.4f}, average {result.macs.average_conditional:.4g} MACs "
            f"({result.macs.conditional_fraction:.3f} of full)"
        )
        return 0

    def cmd_bench(
        self,
        examples: int = BENCH_EXAMPLES,
        repetitions: int = 5,
        force: Optional[float] = None,
        sweep: bool = False,
        **_: Any,
    ) -> int:
        out = self.prepare_output()
        _, test = self.config.data.load()
        count = min(examples, len(test))
        images, labels = test.images(range(count)), test.labels[:count]
        model = self.model()
        reports = [bench(model, images, labels, repetitions=repetitions, force_fraction=force, seed=self.config.seed)]
        if sweep:
            reports += [
                bench(model, images, labels, repetitions=repetitions, force_fraction=f, seed=self.config.seed)
                for f in ACTIVITY_LEVELS
            ]
        (out / BENCH_TABLE_FILE).write_text(format_table(reports))
        _write_json(out / BENCH_JSON_FILE, [r.to_dict() for r in reports])
        for r in reports:
            logger.info(f"cmd_bench: {r.gates}: dense {r.dense}, dense gated {r.dense_gated}, sliced {r.sliced}")
        return 0

    def cmd_analyze(
        self,
        trace: Optional[str] = None,
        thresholds: Tuple[float, float] = (ON_THRESHOLD, OFF_THRESHOLD),
        top_k: int = TOP_K,
        **_: Any,
    ) -> int:
        trace_path = Path(trace) if trace is not None else self.output / TRACE_FILE
        traces = read_trace(trace_path)
        if self.has_config:
            check_macs(traces, self.config.model)
        out = self.prepare_output()
        on, off = thresholds
        classification = classify_gates(traces, on, off)

        with open(out / GATES_CSV_FILE, "w", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(("layer", "index", "rate", "label"))
            for layer, index, rate, label in gate_rows(traces, classification):
                writer.writerow((layer, index, repr(rate), label))

        lowest, highest = mac_ranking(traces, min(top_k, len(traces)))
        per_class = {
            int(c): [layer.tolist() for layer in per_class_firing(traces, int(c)).layers]
            for c in np.unique(traces.labels)
        }
        analysis = {
            "examples": len(traces),
            "thresholds": {"on": on, "off": off},
            "overall": classification.overall,
            "per_layer": classification.per_layer,
            "gates": [
                {"layer": layer, "index": index, "rate": rate, "label": label}
                for layer, index, rate, label in gate_rows(traces, classification)
            ],
            "per_class_firing": per_class,
            "fewest_macs": lowest.tolist(),
            "most_macs": highest.tolist(),
            "class_selective": {str(g): classes for g, classes in class_selective_gates(traces).items()},
        }
        _write_json(out / ANALYSIS_FILE, analysis)
        fractions = ", ".join(f"{k} {v:.3f}" for k, v in classification.overall.items())
        logger.info(f"cmd_analyze: {traces.gate_count} gates over {len(traces)} examples: {fractions}")
        return 0

    def cmd_gradcheck(self, **_: Any) -> int:
        results = gradcheck_suite(self.config.seed)
        failed = [r for r in results if not r.passed]
        for r in results:
            logger.info(f"cmd_gradcheck: {r.name:<28} max rel err {r.max_rel_error:.3e} {'ok' if r.passed else 'FAILED'}")
        out = self.prepare_output()
        _write_json(
            out / GRADCHECK_FILE,
            [{"name": r.name, "max_rel_error": r.max_rel_error, "checked": r.checked, "passed": r.passed} for r in results],
        )
        if failed:
            logger.error(f"cmd_gradcheck: {len(failed)} of {len(results)} checks failed")
            return 1
        return 0

    def cmd_export(self, trace: Optional[str] = None, summaries: Sequence[str] = (), **_: Any) -> int:
        traces = read_trace(trace) if trace is not None else None
        rows = schedule_table(self.config.schedule) if self.has_config else ()
        written = export_all(self.prepare_output() / EXPORT_DIRECTORY, traces, load_summaries(summaries), rows)
        if not written:
            logger.warning("cmd_export: nothing to export, give --trace, --summary or --config")
        return 0
