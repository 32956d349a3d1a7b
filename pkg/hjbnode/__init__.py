"""
Package for learning value and Lyapunov functions of control-affine systems by minimizing residuals of the
Hamilton-Jacobi-Bellman equation along closed loop trajectories, and for warmstarting MPPI with them.
"""

__version__ = '0.1.0'
