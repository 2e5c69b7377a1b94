import concurrent.futures
import logging
import os
from typing import Callable, Iterable, List, TypeVar

logger = logging.getLogger("fpm_cardio")

T = TypeVar("T")
R = TypeVar("R")


def parallel_process(
    items: Iterable[T],
    process_func: Callable[[T], R],
    max_workers: int = 1,
    ordered: bool = True,
) -> List[R]:
    """
    Process items in parallel using a thread pool.

    Args:
        items: Items to process
        process_func: Function to apply to each item
        max_workers: Maximum number of worker threads. 1 runs inline,
            0 or less picks a default from the cpu count.
        ordered: Return results in input order. When False results come
            back in completion order. The first failure is logged and
            re-raised either way.

    Returns:
        List of results
    """
    items_list = list(items)

    if max_workers < 1:
        max_workers = min(8, (os.cpu_count() or 4))

    if max_workers == 1 or len(items_list) < 2:
        return [process_func(item) for item in items_list]

    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
        if ordered:
            return list(executor.map(process_func, items_list))

        futures = [executor.submit(process_func, item) for item in items_list]
        results = []
        for future in concurrent.futures.as_completed(futures):
            try:
                results.append(future.result())
            except Exception as e:
                logger.error(f"Error in parallel processing: {e}")
                raise

    return results


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """
    Set up logging configuration.

    Args:
        verbose: Whether to enable debug logging
        quiet: Only report warnings and errors
    """
    if verbose:
        log_level = logging.DEBUG
    elif quiet:
        log_level = logging.WARNING
    else:
        log_level = logging.INFO

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)

    # Replace handlers left by an earlier call
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    # Console handler writes to standard error
    console_handler = logging.StreamHandler()
    console_handler.setLevel(log_level)

    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    console_handler.setFormatter(formatter)

    root_logger.addHandler(console_handler)

    # Suppress verbose logging from libraries unless in debug mode
    if not verbose:
        logging.getLogger("shapely").setLevel(logging.WARNING)
