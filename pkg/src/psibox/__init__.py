"""psibox: slab-parallel imaginary-time solver for 3d bound states.

Evolves a random start vector with an explicit finite-difference update
in imaginary time on a Dirichlet-padded cubic lattice, extracting ground
and excited eigenstates, energies, binding energies and RMS radii for
arbitrary real potentials. Worker slabs exchange boundary planes with an
inside-out non-blocking protocol; runs are bit-reproducible for any
worker count.
"""

from .errors import (ConfigError, DegenerateSnapshotError, DivergenceError,
                     ExtractionError, FormatError, NonConvergenceError,
                     ProtocolError, PsiboxError, SingularCoefficientError,
                     TransportError, ZeroNormError)
from .evolve import (CheckRecord, EvolutionState, StabilityCheck,
                     check_stability, evolve_to_convergence, renormalize, step)
from .lattice import (Field3D, LatticeSpec, allocate, apply_dirichlet_boundary,
                      fill_random_gaussian, lattice_coords, linear_index)
from .multires import (bootstrap_run, load_wavefunction, resample,
                       save_wavefunction)
from .observables import binding_energy, energy, norm2, rms_radius
from .parallel import (ScalingEstimate, SlabPartition, evolve_parallel,
                       partition, scaling_estimate)
from .potential import (PotentialGrid, coulomb, dodecahedron, from_file,
                        harmonic, precompute_coefficients, save_potential)
from .states import (SymmetryConstraint, extract_excited, impose, project_out,
                     symmetry_excited_run)

__version__ = "0.1.0"
