"""Staggered space-time discontinuous Galerkin solver for the 2D
incompressible Navier-Stokes equations, with quadrature-free assembly.

Pressure lives on a triangular primary grid, velocity on the edge-based
quadrilateral dual grid; each time slab is integrated with a semi-implicit
Picard scheme of arbitrary temporal order.
"""

from ._backend import backend_name
from .basis import DiscretizationOrder
from .mesh import (PrimaryMesh, DualMesh, ElementGeometry, MeshError,
                   build_dual_grid, compute_geometry,
                   generate_structured_mesh, load_mesh, save_mesh)
from .kernels import (ReferenceTensors, ElementAssembler, ElementMatrices,
                      assemble_element_matrices, contract_flux_terms,
                      precompute_reference_tensors)
from .linsys import (BlockSparseMatrix, BlockJacobi, CgReport,
                     NullspaceProjector, bicgstab_solve, cg_solve, matvec)
from .solver import (FluidParams, PicardConfig, SpaceTimeState,
                     StaggeredSolver, TimeStepControl)
from .harness import (ErrorReport, RunConfig, compute_l2_errors, parse_config,
                      run_convergence_study, run_single,
                      taylor_green_exact, write_vtk)

__version__ = "0.1.0"
