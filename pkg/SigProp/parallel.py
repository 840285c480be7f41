import logging
import os
from concurrent.futures import ProcessPoolExecutor

import torch
from tqdm import tqdm

logger = logging.getLogger(__name__)


def worker_count(threads, tasks):
    """Processes used for ``tasks`` independent tasks; None means one per core"""
    return max(1, min(threads or os.cpu_count() or 1, tasks))


def _init_worker():
    # one process per core already; intra-op threads would oversubscribe
    torch.set_num_threads(1)


def parallel_map(fn, tasks, threads, desc, progress=False):
    """Ordered map over independent, picklable tasks; serial when only one worker is needed."""
    tasks = list(tasks)
    workers = worker_count(threads, len(tasks))
    if workers > 1:
        logger.debug('%s: %d tasks on %d processes', desc, len(tasks), workers)
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as pool:
            return list(tqdm(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))),
                             total=len(tasks), desc=desc, disable=not progress))
    return [fn(t) for t in tqdm(tasks, desc=desc, disable=not progress)]
