from concurrent import futures


def map_fn(fn, *iterables, threads=1):
    # Results come back in input order whatever the completion order
    if threads <= 1:
        return [fn(*args) for args in zip(*iterables)]
    with futures.ThreadPoolExecutor(max_workers=threads) as executor:
        result_iterator = executor.map(fn, *iterables)
    return [i for i in result_iterator]
