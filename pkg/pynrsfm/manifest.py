"""
Run Manifests and Output Locations

Every command writes ``<output>.manifest.json`` next to its main output with
the resolved configuration and SHA-256 checksums of the files it read and
wrote. Manifests carry no timestamps, so rerunning a command reproduces its
manifest byte for byte.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import platformdirs
from cryptography.hazmat.primitives import hashes

from .exceptions import NRSfMException

logger = logging.getLogger(__name__)

APP_NAME = "pynrsfm"
_CHUNK = 1 << 20


def default_output_dir() -> Path:
    """
    Platform-specific directory for outputs when ``--out`` is not given.

    Locations:
        - Linux: ~/.local/share/pynrsfm/runs
        - macOS: ~/Library/Application Support/pynrsfm/runs
        - Windows: C:\\Users\\<user>\\AppData\\Local\\pynrsfm\\runs
    """
    path = Path(platformdirs.user_data_dir(appname=APP_NAME, appauthor=False)) / "runs"
    path.mkdir(parents=True, exist_ok=True)
    return path


def sha256_bytes(data: bytes) -> str:
    digest = hashes.Hash(hashes.SHA256())
    digest.update(data)
    return digest.finalize().hex()


def sha256_file(path: Union[str, Path]) -> str:
    """Hex SHA-256 of a file, read in chunks"""
    digest = hashes.Hash(hashes.SHA256())
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(_CHUNK), b""):
            digest.update(chunk)
    return digest.finalize().hex()


@dataclass
class RunManifest:
    """What a command ran with and what it produced"""

    command: str
    config: Dict[str, Any]
    seed: Optional[int]
    threads: int
    version: str
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    status: str = "ok"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _checksums(paths: Iterable[Union[str, Path]]) -> Dict[str, str]:
    return {str(p): sha256_file(p) for p in paths if p is not None and Path(p).exists()}


def write_manifest(
    main_output: Union[str, Path],
    command: str,
    config: Dict[str, Any],
    inputs: Iterable[Union[str, Path]] = (),
    outputs: Iterable[Union[str, Path]] = (),
    status: str = "ok"
) -> Path:
    """
    Write the manifest for a finished command.

    Args:
        main_output: The command's primary output; the manifest goes next to it
        command: Subcommand name
        config: ``RunConfig.to_dict()``
        inputs: Files that were read
        outputs: Files that were written
        status: 'ok' or a short failure tag such as 'aborted'
    """
    from . import __version__

    values = config.get("values", {})
    manifest = RunManifest(
        command=command,
        config=config,
        seed=values.get("seed"),
        threads=int(values.get("threads", 1)),
        version=__version__,
        inputs=_checksums(inputs),
        outputs=_checksums(outputs),
        status=status,
    )
    path = Path(f"{main_output}.manifest.json")
    try:
        path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    except OSError as e:
        raise NRSfMException(f"Failed to write manifest {path}: {e}", error_code="MANIFEST_ERROR")
    logger.debug(f"Wrote manifest {path}")
    return path
