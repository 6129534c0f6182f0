"""Dataset conversion, label-tree construction and evaluation across HTC and XML."""

__version__ = "0.1.0"

from .corpus import (  # noqa: E402
    CorpusError,
    Dataset,
    DatasetStats,
    Document,
    parse_taxonomy,
    parse_text_corpus,
    parse_xml_repo,
    stats,
    subsample,
    write_taxonomy,
    write_text_corpus,
    write_xml_repo,
)
from .features import LabelFeatureMatrix, TfidfModel, fit_tfidf, pifa, tokenize, transform  # noqa: E402
from .hlt import balanced_kmeans, build_hlt, build_hlt_report, segment_tree  # noqa: E402
from .metrics import (  # noqa: E402
    EvalReport,
    RankedPrediction,
    evaluate,
    macro_f1,
    micro_f1,
    precision_at_k,
    r_precision,
)
from .sparse import SparseVector  # noqa: E402
from .transfer import TransferMode, flatten, inject_hierarchy, strip_meta  # noqa: E402
from .tree import LabelTree, NodeKind  # noqa: E402
