"""Material-point laboratory for finite-strain viscoplasticity with a nested
multiplicative split: a partitioned Euler Backward stress integrator, two
reference integrators, deformation-program drivers, and the accuracy /
iso-error / iteration-count experiments built on top of them."""

from .tensor import (DomainError, dev, frob_norm, matrix_exp,
                     principal_sqrt_of_spd_product, sqrt_spd, unimodular)
from .material import (BackstressChannel, MaterialParams, MaterialState,
                       bundled_card, bundled_card_names, cauchy_stress,
                       driving_force_norm, f2_driving_force, free_energy,
                       hardening_R, load_material_card, overstress,
                       pk2_stress, update_s_sd, virgin_state)
from .integrators import (StepFailure, StepInput, StepReport, ebmsc_step,
                          em_step, pebm_step, push_forward_estimate,
                          rough_xi_estimate, solve_ci_closed_form,
                          solve_consistency, trial_overstress,
                          update_cki_explicit, z_perturbation_estimate)
from .loading import (ConfigError, DeformationProgram, isoerror_prestrain,
                      keypoint_program, sample, shear_program)

__version__ = "0.1.0"
