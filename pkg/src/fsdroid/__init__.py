"""Flow-sensitive taint analysis for a small Dalvik-like language.

The pipeline is ``frontend`` (parse) → ``clausegen`` (Horn clauses) →
``solver`` (saturation and leak queries), with ``concrete`` and
``soundness`` providing the reference semantics and differential checks.
"""

__version__ = "0.1.0"
