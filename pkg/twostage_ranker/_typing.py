from __future__ import annotations

import sys
from os import PathLike
from pathlib import Path
from typing import Union

_IS_PY_3_10 = sys.version_info >= (3, 10)

if _IS_PY_3_10:
    from typing import TypeAlias
else:
    from typing_extensions import TypeAlias

StrOrPath: TypeAlias = Union[str, PathLike[str], Path]

__all__ = ["StrOrPath", "TypeAlias"]
