from typing import Any, List, Optional, Union
import gzip
import json
import logging
import os.path

import numpy as np

Seed = Union[None, int, np.random.Generator]


def make_rng(seed: Seed = None) -> np.random.Generator:
    """
    Return a numpy Generator for a seed, passing existing Generators through.

    Args:
        seed (Seed): Integer seed, None, or an already constructed Generator.

    Returns:
        np.random.Generator: Generator to draw from.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _has_valid_extension(
    input_file: str, valid_extensions: List[str], silent: bool = False
) -> bool:
    if not os.path.isfile(input_file):
        logging.error(f"Input file '{input_file}' does not exist.") if not silent else None
        return False

    # Extract the file extension, considering .gz if present
    file_root, base_ext = os.path.splitext(input_file)
    _, upstream_ext = os.path.splitext(file_root)

    # Check if the file is gzipped
    is_gzipped = base_ext.lower() == ".gz"

    if is_gzipped and upstream_ext.lower() not in valid_extensions:
        logging.error(
            f"Invalid file extension for '{input_file}'. Supported extensions are {', '.join(valid_extensions)}. These may be followed by .gz"
        ) if not silent else None
        return False

    # Check if the file extension is valid
    elif not is_gzipped and base_ext.lower() not in valid_extensions:
        logging.error(
            f"Invalid file extension for '{input_file}'. Supported extensions are {', '.join(valid_extensions)}."
        ) if not silent else None
        return False

    return True


def is_valid_json_file(input_json: str, silent: bool = False) -> bool:
    """
    Check that an instance, pool, config or fit file exists and is named *.json(.gz).

    Args:
        input_json (str): Path to the JSON file.
        silent (bool): Suppress error logging.

    Returns:
        bool: True if the file looks usable, False otherwise.
    """
    return _has_valid_extension(input_json, [".json"], silent)


def is_valid_csv_file(input_csv: str, silent: bool = False) -> bool:
    """
    Check that an amplified-sample dump exists and is named *.csv(.gz).

    Args:
        input_csv (str): Path to the CSV file.
        silent (bool): Suppress error logging.

    Returns:
        bool: True if the file looks usable, False otherwise.
    """
    return _has_valid_extension(input_csv, [".csv"], silent)


def open_text(path: str, mode: str = "r"):
    """Open a plain or gzipped text file."""
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t")
    return open(path, mode)


def _to_builtin(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def write_json(data: Any, path: str, indent: Optional[int] = None) -> None:
    """Write a JSON document, converting numpy scalars and arrays on the way."""
    with open_text(path, "w") as handle:
        json.dump(data, handle, default=_to_builtin, indent=indent, sort_keys=True)
    logging.info(f"Wrote: {path}")


def load_json(path: str) -> Any:
    """Read a (possibly gzipped) JSON document."""
    logging.info(f"Reading: {path}")
    with open_text(path, "r") as handle:
        return json.load(handle)
