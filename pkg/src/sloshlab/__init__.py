"""Finite-element laboratory for sloshing and Steklov eigenvalues under
domain perturbations."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .geometry import (MeshDomain, ProblemKind, build_disk, build_half_disk,  # noqa: F401
                       build_rectangle, read_mesh, refine, refine_n, validate_mesh, write_mesh)
from .perturb import (c2_norm_estimate, dilation, eval_field, normal_bump,  # noqa: F401
                      translation, transplant, zero_field)
from .assembly import (boundary_mass_S, flux_recovery, form_dA, form_dB, form_dV,  # noqa: F401
                       robin_matrix, stiffness)
from .spectral import Cluster, Spectrum, detect_clusters, make_cluster, minmax_check, solve  # noqa: F401
from .hadamard import (ClusterDerivative, cluster_matrix, fd_slopes,  # noqa: F401
                       no_splitting_score, predicted_slopes, reduced_matrix)
from .splitting import (SimplificationTrace, SplitReport, find_splitting,  # noqa: F401
                        simplify_spectrum, verify_split)
