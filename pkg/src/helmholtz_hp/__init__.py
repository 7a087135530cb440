"""hp finite elements for the heterogeneous Helmholtz equation.

Modules:

* ``symbol_core``     coefficient fields, the principal symbol and closed-form constants;
* ``frequency_split`` smooth cutoffs, FFT frequency projectors and scaling reports;
* ``dtn_map``         Dirichlet-to-Neumann maps (1D impedance, 2D Hankel modes);
* ``hp_fem``          hierarchical hp finite elements on intervals and radial modes;
* ``experiments``     C_sol and eta estimates, wavenumber sweeps;
* ``cli``             the ``helmholtz-hp`` command.
"""

__version__ = "0.1.0"
