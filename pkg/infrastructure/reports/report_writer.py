from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence
import hashlib
import json
import logging
import math
import os
import shutil

import numpy as np
import pandas as pd

from domain.model.exceptions import InputError

logger = logging.getLogger(__name__)

REPORT_FLOAT_FORMAT = "%.10g"
STAGING_DIR = ".staging"
MANIFEST_FILE = "manifest.json"


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; NaN and infinities become null"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return value.as_posix()
    if hasattr(value, "value") and not isinstance(value, str):
        return to_jsonable(value.value)
    return value


class ReportWriter:
    """Single writer for every run artifact.

    Files are staged under `<out>/.staging`, hashed, and only moved into `<out>` on commit.
    A failed run leaves nothing but a manifest naming the failing stage.
    """

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self._staging = self.out_dir / STAGING_DIR
        self._artifacts: Dict[str, str] = {}

    @property
    def artifacts(self) -> Dict[str, str]:
        return dict(sorted(self._artifacts.items()))

    def prepare(self):
        """Fail before any computation if the output directory cannot be written"""
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            if self._staging.exists():
                shutil.rmtree(self._staging)
            self._staging.mkdir()
            probe = self._staging / ".probe"
            probe.write_bytes(b"")
            probe.unlink()
        except OSError as e:
            raise InputError(f"Output directory {self.out_dir} is not writable: {e}") from e
        self._artifacts = {}

    def write_csv(self, name: str, frame: pd.DataFrame, columns: Optional[Sequence[str]] = None):
        if columns is not None:
            frame = frame.reindex(columns=list(columns))
        text = frame.to_csv(index=False, lineterminator="\n", float_format=REPORT_FLOAT_FORMAT)
        self._stage(name, text)

    def write_json(self, name: str, payload: Any):
        text = json.dumps(to_jsonable(payload), sort_keys=True, indent=2, allow_nan=False, ensure_ascii=False)
        self._stage(name, text + "\n")

    def write_jsonl(self, name: str, records: Iterable[Any]):
        lines = [
            json.dumps(to_jsonable(r), sort_keys=True, allow_nan=False, ensure_ascii=False) + "\n"
            for r in records
        ]
        self._stage(name, "".join(lines))

    def _stage(self, name: str, text: str):
        if name in self._artifacts:
            raise ValueError(f"Artifact {name} written twice")
        data = text.encode("utf-8")
        path = self._staging / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self._artifacts[name] = hashlib.sha256(data).hexdigest()
        logger.debug(f"Staged {name} ({len(data)} bytes)")

    def commit(self, manifest: Dict[str, Any]) -> Dict[str, str]:
        """Move staged artifacts into place and write the manifest"""
        for name in sorted(self._artifacts):
            target = self.out_dir / name
            target.parent.mkdir(parents=True, exist_ok=True)
            os.replace(self._staging / name, target)
        shutil.rmtree(self._staging, ignore_errors=True)
        self._write_manifest({**manifest, "artifacts": self.artifacts})
        logger.info(f"Wrote {len(self._artifacts)} artifacts to {self.out_dir}")
        return self.artifacts

    def abort(self, manifest: Dict[str, Any]):
        """Discard staged artifacts; the manifest still records what failed"""
        shutil.rmtree(self._staging, ignore_errors=True)
        self._artifacts = {}
        try:
            self._write_manifest({**manifest, "artifacts": {}})
        except OSError as e:
            logger.error(f"Could not write failure manifest: {e}")

    def _write_manifest(self, manifest: Dict[str, Any]):
        text = json.dumps(to_jsonable(manifest), sort_keys=True, indent=2, allow_nan=False, ensure_ascii=False)
        (self.out_dir / MANIFEST_FILE).write_text(text + "\n", encoding="utf-8")
