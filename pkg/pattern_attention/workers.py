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

import threading
import queue
import logging
from functools import wraps

logger = logging.getLogger("pattern_attention")

class OrderedWorkerPool:
    """
    Runs a function over a list of items on a fixed number of worker
    threads and hands back the results in item order.

    Workers consume (position, item) pairs from a shared queue; None on the
    queue tells a worker to terminate. The first exception raised by any
    worker is stored and re-raised in the calling thread once all workers
    have stopped.
    """

    def __init__(self, func, threads=1, name="pattern_attention_worker"):
        self.func = func
        self.threads = max(1, int(threads))
        self.name = name
        self.work_queue = queue.Queue()
        self.results = None
        self.worker_exception = None
        self._lock = threading.Lock()

    def map(self, items):
        items = list(items)
        self.results = [None] * len(items)
        self.worker_exception = None

        if self.threads == 1 or len(items) <= 1:
            for i, item in enumerate(items):
                self.results[i] = self.func(item)
            return self.results

        workers = []
        for n in range(min(self.threads, len(items))):
            worker = threading.Thread(
                target=self._log_worker_exceptions(self._consume),
                name="{0}_{1}".format(self.name, n))
            worker.start()
            workers.append(worker)

        for i, item in enumerate(items):
            self.work_queue.put((i, item))

        # One termination signal per worker
        for _ in workers:
            self.work_queue.put(None)

        for worker in workers:
            worker.join()

        if self.worker_exception:
            raise self.worker_exception

        return self.results

    def _consume(self):
        while True:
            task = self.work_queue.get()

            # None indicates to terminate the worker
            if task is None:
                break

            # Drain the queue without doing work once a sibling has failed
            if self.worker_exception:
                continue

            i, item = task
            self.results[i] = self.func(item)

    def _log_worker_exceptions(self, func):
        """
        Records exceptions in worker threads so the main thread knows.
        """

        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                func(*args, **kwargs)
            except Exception as e:
                logger.error("{0} worker failed: {1!r}".format(self.name, e))
                with self._lock:
                    if self.worker_exception is None:
                        self.worker_exception = e
                # keep draining so the other workers see their sentinels
                self._consume()

        return wrapper

def run_ordered(func, items, threads=1, name="pattern_attention_worker"):
    """
    Returns [func(item) for item in items], evaluated on `threads` workers.
    """
    return OrderedWorkerPool(func, threads=threads, name=name).map(items)
