"""
Stream CSV reading and writing

Schema: header line `t,i,group,score,y,x1,...,xD`, one row per observation,
`group` empty when absent. Leading lines starting with `#` carry provenance as
`# key: <json>`.
"""

import json
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from marblr.errors import ConfigError, StreamFormatError
from marblr.simulation import ScenarioSpec, SimBatch, refit_labels

logger = logging.getLogger("marblr.streamio")

FORMAT_TAG = "marblr-stream 1"
FIXED_COLUMNS = ["t", "i", "group", "score", "y"]


def stream_frame(batches: Sequence[SimBatch]) -> pd.DataFrame:
    """
    Tabulate batches in the stream schema

    Returns:
        DataFrame with columns t, i, group, score, y, x1..xD
    """
    frames = []
    for batch in batches:
        frame = pd.DataFrame({
            "t": np.full(batch.n, batch.t, dtype=int),
            "i": np.arange(batch.n, dtype=int),
            "group": pd.array(batch.group if batch.group is not None else [None] * batch.n,
                              dtype="Int64"),
            "score": batch.original_score,
            "y": batch.y.astype(int),
        })
        for j in range(batch.x.shape[1]):
            frame[f"x{j + 1}"] = batch.x[:, j]
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def write_stream(path: str, batches: Sequence[SimBatch],
                 provenance: Optional[Dict[str, Any]] = None) -> int:
    """
    Write a stream CSV

    Args:
        path: Output file
        batches: Batches in time order
        provenance: Header entries, written sorted by key

    Returns:
        Number of data rows written
    """
    frame = stream_frame(batches)
    with open(path, "w", newline="") as f:
        f.write(f"# format: {json.dumps(FORMAT_TAG)}\n")
        for key in sorted(provenance or {}):
            f.write(f"# {key}: {json.dumps(provenance[key], sort_keys=True)}\n")
        frame.to_csv(f, index=False)
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return len(frame)


def read_header(path: str) -> Dict[str, Any]:
    """Parse the `# key: <json>` provenance lines at the top of a stream CSV"""
    header = {}
    with open(path) as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, sep, value = line[1:].strip().partition(":")
            if not sep:
                continue
            try:
                header[key.strip()] = json.loads(value)
            except json.JSONDecodeError as e:
                raise StreamFormatError(f"Bad header line {line.strip()!r}: {e}") from e
    return header


def read_stream(path: str) -> Tuple[List[SimBatch], Dict[str, Any]]:
    """
    Read a stream CSV

    Scenario-3 streams carrying their scenario spec in the header get their
    refit labels regenerated; true probabilities are unknown (NaN).

    Args:
        path: Stream file

    Returns:
        (batches for t = 1..max t, header)

    Raises:
        StreamFormatError: on a malformed file
    """
    header = read_header(path)
    try:
        frame = pd.read_csv(path, comment="#", dtype={"group": "Int64"}, float_precision="round_trip")
    except (ValueError, pd.errors.ParserError) as e:
        raise StreamFormatError(f"Could not parse {path}: {e}") from e

    columns = list(frame.columns)
    x_columns = columns[len(FIXED_COLUMNS):]
    if columns[:len(FIXED_COLUMNS)] != FIXED_COLUMNS or \
            x_columns != [f"x{j + 1}" for j in range(len(x_columns))]:
        raise StreamFormatError(f"Unexpected columns {columns}")
    if frame.empty:
        raise StreamFormatError(f"{path} holds no observations")
    if frame[["t", "i", "score", "y"] + x_columns].isna().any().any():
        raise StreamFormatError("Missing values outside the group column")
    if not frame["y"].isin([0, 1]).all():
        raise StreamFormatError("Outcomes must be 0 or 1")
    if not frame["score"].between(0.0, 1.0).all():
        raise StreamFormatError("Scores must lie in [0, 1]")
    if (frame["t"] < 1).any():
        raise StreamFormatError("Time indices must be >= 1")

    spec = None
    if "spec" in header:
        try:
            spec = ScenarioSpec.from_dict(header["spec"])
        except (ConfigError, TypeError) as e:
            raise StreamFormatError(f"Bad spec header: {e}") from e

    batches = []
    grouped = dict(tuple(frame.groupby("t", sort=True)))
    d_x = len(x_columns)
    for t in range(1, int(frame["t"].max()) + 1):
        rows = grouped.get(t)
        if rows is None:
            rows = frame.iloc[0:0]
        rows = rows.sort_values("i")
        y = rows["y"].to_numpy(dtype=float)
        group = None
        if rows["group"].notna().any():
            if rows["group"].isna().any():
                raise StreamFormatError(f"Step {t} mixes rows with and without group")
            group = rows["group"].to_numpy(dtype=int)
        refit_y = refit_labels(spec, t, y) if spec is not None else y.copy()
        batches.append(SimBatch(t=t,
                                x=rows[x_columns].to_numpy(dtype=float).reshape(len(rows), d_x),
                                group=group,
                                true_prob=np.full(len(rows), np.nan),
                                y=y,
                                original_score=rows["score"].to_numpy(dtype=float),
                                refit_y=refit_y))
    logger.info(f"Read {len(frame)} rows over {len(batches)} steps from {path}")
    return batches, header
