"""
Mini-batch iteration with optional worker threads.

Worker w prepares batches w, w + workers, w + 2·workers, ... into its own
queue; the consumer reads the queues round-robin. Batch contents depend
only on (seed, epoch, batch index), never on the number of workers.
"""

import logging
import threading
from queue import Empty, Full, Queue
from typing import Iterator, List, Tuple

import numpy as np

from ..ImageHelpers import PILHelper
from .DatasetSource import ImageSet

logger = logging.getLogger("BatchLoader")
# logger.setLevel(logging.DEBUG)

VERBOSE = False
GET_TIMEOUT = 1  # Queue get() timeout, in seconds


class BatchLoader:
    def __init__(
        self,
        data: ImageSet,
        batch_size: int,
        seed: int = 0,
        epoch: int = 0,
        shuffle: bool = True,
        augment: bool = False,
        workers: int = 0,
        prefetch: int = 2,
        drop_last: bool = False,
    ):
        if batch_size < 1:
            raise ValueError(f"BatchLoader: batch size must be positive, got {batch_size}")
        if workers < 0 or prefetch < 1:
            raise ValueError(f"BatchLoader: invalid workers {workers} / prefetch {prefetch}")
        self.data = data
        self.batch_size = batch_size
        self.seed, self.epoch = seed, epoch
        self.augment = augment
        self.workers, self.prefetch = workers, prefetch

        if shuffle:
            self.order = np.random.default_rng([seed, epoch]).permutation(len(data))
        else:
            self.order = np.arange(len(data))
        full, rest = divmod(len(data), batch_size)
        self.batch_count = full if drop_last or rest == 0 else full + 1

        self.threads: List[threading.Thread] = []
        self.queues: List[Queue] = []
        self.running = False

    def __len__(self) -> int:
        return self.batch_count

    def make_batch(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Normalized float32 images [B, C, H, W] and int64 labels of batch `index`.
        """
        indices = self.order[index * self.batch_size : (index + 1) * self.batch_size]
        pixels = self.data.pixels[indices]
        if self.augment:
            pixels = PILHelper.augment_batch(pixels, np.random.default_rng([self.seed, self.epoch, index]))
        return self.data.normalize(pixels), self.data.labels[indices]

    # #########################################@
    # Threading
    #
    def _work(self, worker: int):
        queue = self.queues[worker]
        logger.debug(f"_work: worker {worker} starting")
        for index in range(worker, self.batch_count, self.workers):
            try:
                item = self.make_batch(index)
            except Exception as e:
                logger.error(f"_work: worker {worker}: batch {index}: exception:", exc_info=1)
                item = e
            while self.running:
                try:
                    queue.put(item, timeout=GET_TIMEOUT)
                    break
                except Full:
                    continue
            if not self.running or isinstance(item, Exception):
                break
        logger.debug(f"_work: worker {worker} terminated")

    def start(self):
        if self.running:
            logger.warning("start: already running")
            return
        self.running = True
        self.queues = [Queue(maxsize=self.prefetch) for _ in range(self.workers)]
        self.threads = []
        for w in range(self.workers):
            thread = threading.Thread(target=self._work, args=(w,), daemon=True)
            thread.name = f"BatchLoader::_work-{w}"
            self.threads.append(thread)
            thread.start()
        logger.debug(f"start: {self.workers} workers started")

    def stop(self):
        if not self.running:
            return
        self.running = False
        for thread in self.threads:
            thread.join(timeout=2 * GET_TIMEOUT)
            if thread.is_alive():
                logger.warning(f"stop: {thread.name} did not finish cleanly")
        logger.debug("stop: stopped")

    def _get(self, index: int):
        queue = self.queues[index % self.workers]
        while True:
            try:
                return queue.get(timeout=GET_TIMEOUT)
            except Empty:
                if not self.threads[index % self.workers].is_alive():
                    raise RuntimeError(f"BatchLoader: worker {index % self.workers} died before batch {index}")
                logger.debug(f"_get: waiting for batch {index}..", exc_info=VERBOSE)

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        if self.workers == 0:
            for index in range(self.batch_count):
                yield self.make_batch(index)
            return
        self.start()
        try:
            for index in range(self.batch_count):
                item = self._get(index)
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            self.stop()
