"""Provenance stamps: tie every output artifact to its exact inputs."""

from __future__ import annotations

from .ioutil import canonical_json, sha256_file_hex, sha256_hex


def config_hash(config: dict) -> str:
    return sha256_hex(canonical_json(config).encode("utf-8"))


def write_stamp(artifact_path, command: str, inputs: dict, config: dict) -> str:
    """Write ``<artifact>.prov.json`` naming the inputs by checksum.

    The stamp itself is deterministic (no timestamps), so stamped
    pipelines stay byte-reproducible end to end.
    """
    stamp = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {name: sha256_file_hex(path) for name, path in sorted(inputs.items())},
    }
    stamp_path = f"{artifact_path}.prov.json"
    with open(stamp_path, "w", encoding="utf-8") as f:
        f.write(canonical_json(stamp) + "\n")
    return stamp_path
