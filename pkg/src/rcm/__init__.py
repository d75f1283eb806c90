"""Heat kernels, entropies and gradients for random walks among dynamic random conductances."""
from .env import (Constant, EnvironmentField, FieldSpec, Layered, MarginalLaw, Renewal, StaticIID,
                  breakpoints, conductance, make_field, reverse_field, shift_field)
from .kernel import (GeneratorMatrix, KernelSlice, LatticeBox, dirichlet_form, evolve, generator,
                     heat_kernel_col, heat_kernel_row)

__version__ = "0.1.0"
