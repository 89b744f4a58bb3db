"""Builds the extension with cargo and copies it next to this file."""

import shutil
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    subprocess.run(["cargo", "build", "--release", "-p", "reflector-py"], cwd=ROOT, check=True)
    lib = {"linux": "libreflector_py.so", "darwin": "libreflector_py.dylib"}.get(sys.platform, "reflector_py.dll")
    suffix = ".pyd" if sys.platform == "win32" else ".so"
    dest = Path(__file__).resolve().parent / f"reflector_py{suffix}"
    shutil.copyfile(ROOT / "target" / "release" / lib, dest)
    print(dest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
