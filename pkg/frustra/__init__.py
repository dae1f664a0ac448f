"""
frustra - Unfrustrated qudit chains: solution counting, exact kernel propagation and imaginary-time MPS search
"""

__version__ = "0.1.0"
