"""Download client for the published corpus archive.

The archive lives in a Zenodo record; its address and the pinned
SHA-256 digest are read from a small JSON config shipped with the
package (overridable). Verification is enforced whenever a digest is
pinned; with no pin the computed digest is reported so it can be
recorded.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from nightcall.errors import ChecksumError, IoError

logger = logging.getLogger(__name__)

ZENODO_RECORD = "14039937"
DEFAULT_URL = f"https://zenodo.org/api/records/{ZENODO_RECORD}/files-archive"

_CHUNK = 1 << 20


@dataclass(frozen=True)
class FetchConfig:
    url: str = DEFAULT_URL
    sha256: str | None = None  # pin after first verified download
    filename: str = f"zenodo-{ZENODO_RECORD}.zip"

    @classmethod
    def load(cls, path: str | Path) -> "FetchConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            url=doc.get("url", DEFAULT_URL),
            sha256=doc.get("sha256"),
            filename=doc.get("filename", f"zenodo-{ZENODO_RECORD}.zip"),
        )


def cache_dir() -> Path:
    env = os.environ.get("NIGHTCALL_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "nightcall"


def sha256_of(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            block = fh.read(_CHUNK)
            if not block:
                break
            digest.update(block)
    return digest.hexdigest()


def fetch_archive(
    cfg: FetchConfig | None = None,
    dest_dir: str | Path | None = None,
    timeout: float = 30.0,
) -> Path:
    """Download the corpus archive into the cache and verify its digest.

    Returns the local path. A file already present and matching the pin
    is not downloaded again. Raises IoError when the host is
    unreachable and ChecksumError on digest mismatch.
    """
    cfg = cfg or FetchConfig()
    dest_dir = Path(dest_dir) if dest_dir else cache_dir()
    dest_dir.mkdir(parents=True, exist_ok=True)
    dest = dest_dir / cfg.filename

    if dest.exists() and cfg.sha256 and sha256_of(dest) == cfg.sha256:
        logger.info("archive already cached at %s", dest)
        return dest

    partial = dest.with_suffix(dest.suffix + ".part")
    try:
        with urllib.request.urlopen(cfg.url, timeout=timeout) as response:
            with open(partial, "wb") as out:
                while True:
                    block = response.read(_CHUNK)
                    if not block:
                        break
                    out.write(block)
    except (urllib.error.URLError, OSError, TimeoutError) as exc:
        partial.unlink(missing_ok=True)
        raise IoError(f"cannot download {cfg.url}: {exc}")

    digest = sha256_of(partial)
    if cfg.sha256 is not None:
        if digest != cfg.sha256:
            partial.unlink(missing_ok=True)
            raise ChecksumError(
                f"sha256 mismatch for {cfg.url}: expected {cfg.sha256}, got {digest}"
            )
    else:
        logger.warning(
            "no pinned sha256; downloaded archive has sha256 %s "
            "(record it in the fetch config to enforce verification)",
            digest,
        )
    partial.replace(dest)
    return dest
