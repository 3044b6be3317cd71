"""Economic-complexity analytics for multilingual wiki edit histories.

Languages play the role of countries and articles the role of products:
edit counts become an activity matrix, revealed comparative advantage
turns it into a binary specialization matrix, and the usual complexity,
similarity and relatedness machinery runs on top of that.
"""

__version__ = "0.1.0"

from kcomplex.errors import (  # noqa: F401
    DataError,
    EmptyMatrixError,
    KComplexError,
    NetworkError,
    ParseError,
    PreconditionError,
)
from kcomplex.matrix import (  # noqa: F401
    ActivityMatrix,
    CorpusSlice,
    EditEvent,
    build_activity_matrix,
    prune,
    slice_by_year,
)
from kcomplex.rca import AdvantageMatrix, RcaMatrix, binarize, compute_rca  # noqa: F401
from kcomplex.complexity import (  # noqa: F401
    ComplexityScores,
    diversity_ubiquity,
    eci_eigen,
    eci_reflections,
    rank_articles_by_pci,
)
