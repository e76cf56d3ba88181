"""Dispatch between the numba and numpy convolution kernels."""

from ..backend import USE_NUMBA

if USE_NUMBA:
    from .numba_impl import conv2d_forward, conv2d_grad_input, conv2d_grad_kernel
else:
    from .numpy_impl import conv2d_forward, conv2d_grad_input, conv2d_grad_kernel

__all__ = ["conv2d_forward", "conv2d_grad_input", "conv2d_grad_kernel"]
