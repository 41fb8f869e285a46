"""
Coupled FEM-BEM solver for transient electromagnetic scattering.

Submodules are imported on demand so that ``tdscatter.cli`` can configure
thread counts before numpy is loaded.
"""
__version__ = "0.1.0"
