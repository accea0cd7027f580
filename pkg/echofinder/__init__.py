"""多频回波图鲱鱼群检测工具包。"""

__version__ = "0.1.0"

from .cli import main

__all__ = ["main", "__version__"]
