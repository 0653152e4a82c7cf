"""Quotient-space SE(3)-equivariant point convolution (C++ core)."""

from ._core import (
    Error,
    bench,
    conv,
    group_info,
    group_tables,
    kernel_tables,
    permutation_expand,
    run_checks,
    synth_shape,
)

__all__ = [
    "Error",
    "bench",
    "conv",
    "group_info",
    "group_tables",
    "kernel_tables",
    "permutation_expand",
    "run_checks",
    "synth_shape",
]
