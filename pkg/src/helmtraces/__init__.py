"""2D frequency-domain Helmholtz solver via nested polarized interface traces."""

from .grid import (ComplexField, DimensionMismatchError, Grid, HelmholtzOperator,
                   InvalidGridError, PmlProfile, assemble_helmholtz, build_grid,
                   global_operator, pml_stretch)
from .models import SlownessModel, load_model, save_model, synthetic_model
from .sparse import Factorization, SingularPivotError, factorize, solve
from .gmres import BreakdownError, GmresStats, gmres
from .plr import PlrMatrix, PlrStats, compress, plr_matvec, stats
from .layers import (LayerLocal, LayerPartition, PartitionError, PolarizedTraceSet,
                     SolveOptions, TraceSet, apply_polarized_system,
                     apply_trace_system, build_layer, build_layers,
                     gauss_seidel_sweep, local_rhs, local_rhs_samples, outer_solve,
                     partition_layers, reconstruct_volume, setup_layers)
from .cells import (CellGreens, CellPartition, CellSolver, InnerLU, InnerSystem,
                    NearSingularBlockError, apply_green_nested, assemble_inner,
                    block_lu_inner, build_cell_greens, inner_solve, partition_cells)
from .bench import (ConfigError, RunConfig, RunReport, dump_field, npml_policy,
                    run_scaling_study, run_solve, snapshot_iterations)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
