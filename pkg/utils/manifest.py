from pathlib import Path
from typing import Iterator, Optional

import pandas as pd
from tqdm import tqdm

from utils.errors import InvalidManifest, IoFailure
from utils.detector import extract_features
from utils.imaging import PixelImage, PreprocessConfig, load_image, preprocess
from utils.protocol import LabeledSample
from utils.quality_data import HierLabel, Tier, tier_label


def read_manifest(path) -> pd.DataFrame:
    """CSV with `id,path,label` (label in {0,1}) or `id,path,hier_label`."""
    try:
        frame = pd.read_csv(path, dtype={"id": str, "path": str})
    except FileNotFoundError as e:
        raise IoFailure(f"Manifest {path} not found") from e
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InvalidManifest(f"Cannot parse manifest {path}: {e}") from e

    if not {"id", "path"} <= set(frame.columns) or not ({"label", "hier_label"} & set(frame.columns)):
        raise InvalidManifest(f"{path} needs columns id,path and label or hier_label")
    if frame["id"].duplicated().any():
        raise InvalidManifest(f"{path} has duplicate ids")
    if "label" in frame.columns and not frame["label"].isin([0, 1]).all():
        raise InvalidManifest(f"{path} labels must be 0 or 1")
    if "hier_label" in frame.columns:
        known = {label.value for label in HierLabel}
        if not frame["hier_label"].isin(known).all():
            raise InvalidManifest(f"{path} hier_label must be one of {sorted(known)}")

    # Image paths resolve against the manifest's directory
    base = Path(path).parent
    frame["path"] = [str(p if Path(p).is_absolute() else base / p) for p in frame["path"]]
    return frame


def tier_rows(frame: pd.DataFrame, tier: Optional[Tier]) -> list[tuple[str, str, bool]]:
    """(id, path, label) rows for one tier; hierarchical manifests are filtered and relabelled."""
    if "label" in frame.columns:
        return [(row.id, row.path, bool(row.label)) for row in frame.itertuples()]
    if tier is None:
        raise InvalidManifest("A hierarchical manifest needs a tier to derive binary labels")
    rows = []
    for row in frame.itertuples():
        label = tier_label(HierLabel(row.hier_label), tier)
        if label is not None:
            rows.append((row.id, row.path, label))
    return rows


def load_samples(path, tier: Optional[Tier], preprocess_config: PreprocessConfig, quiet: bool = True) -> list[LabeledSample]:
    samples = []
    for sample_id, image_path, label in tqdm(tier_rows(read_manifest(path), tier), desc="features", disable=quiet, leave=False):
        tensor = preprocess(load_image(image_path), preprocess_config)
        samples.append(LabeledSample(id=sample_id, source=image_path, label=label, features=extract_features(tensor)))
    return samples


def iter_hier_samples(path) -> Iterator[tuple[PixelImage, HierLabel]]:
    frame = read_manifest(path)
    if "hier_label" not in frame.columns:
        raise InvalidManifest(f"{path} has no hier_label column")
    for row in frame.itertuples():
        yield load_image(row.path), HierLabel(row.hier_label)
