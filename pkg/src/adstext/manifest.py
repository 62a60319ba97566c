"""Run manifests: an audit record written next to every produced artifact.

The manifest captures the command, its resolved configuration, input and
output hashes, the seed, and the start time. Re-running a command with the
same inputs and seed reproduces the artifacts bit-exactly; the manifest's
hashes make that checkable after the fact.
"""

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)  # path -> sha256
    seed: int | None = None
    started: str = ""

    @classmethod
    def start(cls, command: str, config: dict, seed=None) -> "RunManifest":
        return cls(
            command=command,
            config=config,
            seed=seed,
            started=datetime.now(timezone.utc).isoformat(),
        )

    def record_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def record_output(self, path) -> None:
        self.outputs[str(path)] = sha256_file(path)

    def write(self) -> None:
        """One manifest file per produced artifact: <artifact>.manifest.json."""
        payload = json.dumps(asdict(self), indent=2, sort_keys=True)
        for path in self.outputs:
            _atomic_write_text(path + ".manifest.json", payload)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
