"""Self-training with ensemble-diversity confidence (T-similarity).

Submodules: ``linalg``, ``nn``, ``confidence``, ``selftrain``, ``data``,
``theory``, ``evaluation``, ``experiment`` and ``cli``.
"""
__version__ = "0.1.0"

from ._accel import backend_name  # noqa: E402,F401
