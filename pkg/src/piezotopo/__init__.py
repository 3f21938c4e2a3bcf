"""Level-set topology optimization of unimorph piezoelectric energy harvesters.

The engine evolves two nodal level-set fields (piezoelectric film, substrate)
with an anisotropic reaction-diffusion update so that the open-circuit
eigenfrequencies of the coupled electromechanical model track prescribed
targets while the per-mode coupling coefficients k2 grow, subject to
etching-manufacturability regularization, a substrate-dependence constraint
carried by a fictitious diffusion field, and an optional minimum output
voltage constraint evaluated by modal superposition.
"""

__version__ = "0.1.0"
