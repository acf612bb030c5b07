"""semforge: semantic data-processing pipelines over document collections.

Declarative operator sequences (map, filter, reduce, resolve, unnest,
split, gather, code ops) powered by LLM prompts with typed output schemas,
executed with incremental caching and streamed progress; plus the feedback
loop: in-situ notes, assisted prompt refinement, LLM-as-judge validation,
and operation decomposition.
"""

__version__ = "0.1.0"
