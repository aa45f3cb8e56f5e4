"""memkernel: learn memory kernels and Hamiltonian parameters of noisy quantum simulators."""

__version__ = "0.1.0"
