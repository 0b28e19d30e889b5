from concurrent.futures import ProcessPoolExecutor


def map_tasks(fn, tasks, jobs=1, chunksize=1):
    """Apply ``fn`` to every task, returning results in task order.

    ``jobs <= 1`` runs serially in-process. Result order never depends on
    completion order, so callers can reduce without extra sorting.
    """
    tasks = list(tasks)
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, tasks, chunksize=chunksize))
