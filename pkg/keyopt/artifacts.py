"""
Run output: one directory per run holding JSON/CSV artifacts and a
manifest.json with each artifact's SHA-256 and the config hash. Timestamps
only appear in the manifest's "metadata" block so reruns are byte-identical
elsewhere. Each finished run is also recorded in the database registry.
"""

import csv
import hashlib
import io
import json
import logging
from pathlib import Path

from django.conf import settings
from django.db import DatabaseError, transaction
from django.utils import timezone

from .models import Artifact, Run

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
HISTOGRAM_HEADER = ("bin_lo", "bin_hi", "count", "mass")


def dumps(payload):
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def default_output_dir(command, config_hash):
    return Path(settings.KEYOPT_OUTPUT_DIR) / f"{command}-{config_hash[:12]}"


def keypoints_payload(method, sets):
    """sets: iterable of (object_ids, KeypointSet or (N, 3) coords)."""
    return {
        "method": method,
        "sets": [
            {
                "object_ids": list(object_ids),
                "keypoints": [[float(x) for x in row] for row in getattr(keypoints, "coords", keypoints)],
            }
            for object_ids, keypoints in sets
        ],
    }


def histogram_csv(histogram):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(HISTOGRAM_HEADER)
    edges = histogram.bin_edges
    for b in range(histogram.bins):
        writer.writerow([repr(float(edges[b])), repr(float(edges[b + 1])), int(histogram.raw_counts[b]), repr(float(histogram.mass[b]))])
    return buffer.getvalue()


class RunOutput:
    """Collects the artifacts of one command run inside `directory`."""

    def __init__(self, command, config, directory=None):
        self.command = command
        self.config = config
        self.directory = Path(directory) if directory else default_output_dir(command, config.config_hash)
        self.artifacts = {}
        self.started_at = timezone.now()

    def _write(self, name, data):
        path = self.directory / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.artifacts[name] = {"sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}
        logger.debug("Wrote %s (%d bytes)", path, len(data))
        return path

    def write_json(self, name, payload):
        return self._write(name, dumps(payload).encode("utf-8"))

    def write_text(self, name, text):
        return self._write(name, text.encode("utf-8"))

    def adopt(self, name):
        """Register a file some other writer produced inside the run directory."""
        return self._write(name, (self.directory / name).read_bytes())

    def manifest(self, summary):
        return {
            "version": MANIFEST_VERSION,
            "command": self.command,
            "config_hash": self.config.config_hash,
            "config": self.config.as_dict(),
            "summary": summary,
            "artifacts": [{"name": name, **info} for name, info in sorted(self.artifacts.items())],
            "metadata": {
                "started_at": self.started_at.isoformat(),
                "finished_at": timezone.now().isoformat(),
            },
        }

    def finish(self, summary):
        """Write the manifest and record the run; returns the manifest path."""
        manifest = self.manifest(summary)
        path = self.directory / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(manifest), encoding="utf-8")
        record_run(self, summary, Run.STATUS_OK)
        return path


def record_run(output, summary, status):
    """Store a run and its artifacts; a missing or unmigrated database only logs."""
    try:
        with transaction.atomic():
            run = Run.objects.create(
                command=output.command,
                config_hash=output.config.config_hash,
                output_dir=str(output.directory),
                status=status,
                summary=summary,
                finished_at=timezone.now(),
            )
            Artifact.objects.bulk_create(
                Artifact(run=run, name=name, sha256=info["sha256"], size=info["bytes"])
                for name, info in sorted(output.artifacts.items())
            )
        return run
    except DatabaseError as exc:
        logger.warning("Run registry unavailable, run not recorded: %s", exc)
        return None
