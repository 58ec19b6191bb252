"""Run manifest (checksums, timings) and the output-directory lock."""

import hashlib
import json
import os
from pathlib import Path

from ..exceptions import ConfigError

MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"


def sha256_file(path, chunk=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(chunk), b""):
            h.update(block)
    return h.hexdigest()


def _version():
    from .. import __version__

    return __version__


class RunManifest:
    """Per-directory record of which stage wrote which file, and its checksum.

    A stage entry stores the config digest, the checksums of the inputs it
    read and of the outputs it wrote, plus its wall time.
    """

    def __init__(self, root, config_digest):
        self.root = Path(root)
        self.config_digest = config_digest
        self.stages = {}
        path = self.root / MANIFEST_NAME
        if path.is_file():
            data = json.loads(path.read_text())
            self.stages = data.get("stages", {})

    @property
    def artifacts(self):
        out = {}
        for record in self.stages.values():
            out.update(record["outputs"])
        return dict(sorted(out.items()))

    def checksums(self, names):
        return {name: sha256_file(self.root / name) for name in names}

    def is_current(self, stage, inputs):
        """True if ``stage`` already ran with this config, these inputs and
        its outputs are untouched."""
        record = self.stages.get(stage)
        if record is None or record["config_digest"] != self.config_digest:
            return False
        if record["inputs"] != self.checksums(inputs):
            return False
        outputs = record["outputs"]
        return all((self.root / name).is_file() for name in outputs) and outputs == self.checksums(outputs)

    def record(self, stage, inputs, outputs, seconds):
        self.stages[stage] = {
            "config_digest": self.config_digest,
            "seconds": round(float(seconds), 3),
            "inputs": self.checksums(inputs),
            "outputs": self.checksums(outputs),
        }
        self.save()

    def save(self):
        data = {
            "config_digest": self.config_digest,
            "software_version": _version(),
            "stages": self.stages,
            "artifacts": self.artifacts,
        }
        tmp = self.root / (MANIFEST_NAME + ".tmp")
        tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self.root / MANIFEST_NAME)


class RunLock:
    """Exclusive ownership of an output directory for the duration of a run."""

    def __init__(self, root):
        self.path = Path(root) / LOCK_NAME

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"{self.path.parent} is locked by another run (delete {self.path} if it is stale)"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False
