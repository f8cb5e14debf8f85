"""Distributed sparse matrix triple products C = Pt*A*P on 1D block rows.

Three algorithms behind one driver: the classical two-step method (form
A*P, transpose P, multiply again) and two memory-lean variants that build C
in a single pass per phase through outer products of P rows with rows of
A*P, never materializing an auxiliary matrix.  Ranks are simulated
in-process with a deterministic scheduler; memory is accounted byte-exactly
per ledger category.
"""

from .bench import BenchConfig, Comparison, RunReport, compare_algorithms, emit_report, read_report, run_benchmark
from .comm import (
    ContributionBatch,
    MessageRecord,
    RankContext,
    RemoteRows,
    dump_trace,
    exchange_contributions,
    gather_remote_rows_symbolic,
    spawn_ranks,
    update_remote_rows_numeric,
)
from .errors import (
    AssemblyError,
    DeadlockError,
    MatrixMarketError,
    OwnershipError,
    PartitionMismatchError,
    SizeCapError,
    StructuralDriftError,
)
from .ledger import MemoryLedger, PhaseTimer, PlanCounters
from .mmio import read_matrix_market, write_matrix_market
from .partition import (
    DistMatrix,
    LocalMatrix,
    NeighborList,
    RowPartition,
    assemble_global,
    build_neighbor_list,
    dist_from_global,
    make_partition,
    owner,
    split_local,
)
from .problems import (
    GridSpec,
    ORACLE_SIZE_CAP,
    build_interpolation,
    build_model_operator,
    distribute,
    grid_dims,
    model_problem,
    oracle_ptap,
    random_instance,
)
from .sparse import CsrMatrix, RowAccumulator, RowSet, Triplet, csr_from_triplets, relative_difference, transpose
from .spgemm import (
    AllocatedMatrix,
    RowStructure,
    numeric_ap,
    numeric_row_ap,
    symbolic_ap,
    symbolic_row_ap,
)
from .tripleproduct import (
    ALGORITHMS,
    ALL_AT_ONCE,
    CACHE_FREE,
    CACHE_KEEP,
    MERGED,
    TWO_STEP,
    TripleProductPlan,
    aao_numeric,
    aao_symbolic,
    merged_numeric,
    merged_symbolic,
    ptap,
    run_numeric,
    run_symbolic,
    two_step_numeric,
    two_step_symbolic,
)

__version__ = "0.1.0"
