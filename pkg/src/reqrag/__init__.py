"""reqrag: hybrid lexical/vector retrieval with routed generation and full provenance.

The package is organized by pipeline stage:

- :mod:`reqrag.ingest` — structured-record parsing and boundary-respecting chunking
- :mod:`reqrag.lexical` — domain-aware tokenization and the BM25 inverted index
- :mod:`reqrag.embedding` — pluggable 512-d unit-norm text encoders
- :mod:`reqrag.hnsw` — the navigable small-world vector index and exact oracle
- :mod:`reqrag.fusion` — weighted reciprocal-rank fusion and re-ranking
- :mod:`reqrag.orchestrator` — complexity routing, retries, breakers, cost ledger
- :mod:`reqrag.provenance` — per-answer traceability records and verification
- :mod:`reqrag.evaluation` — MRR / P@k / NDCG, significance tests, evolution reports
- :mod:`reqrag.system` / :mod:`reqrag.cli` / :mod:`reqrag.service` — wiring and front doors
"""

__version__ = "0.1.0"

from .config import SystemConfig, load_config
from .system import RagSystem

__all__ = ["SystemConfig", "load_config", "RagSystem", "__version__"]
