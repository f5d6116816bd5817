"""Multi-component floating-point tensors and a small training stack on top of them."""

__version__ = "0.1.0"

from .eft import Precision, fma_flags, set_fma, two_prod, two_sum  # noqa: E402
from .linalg import (  # noqa: E402
    addmm_mcn, bmm_mcn, dot_mcn, matmul_mcn, mm_mcn, mv_mcn, reduce_sum, set_default_plan,
)
from .mct import (  # noqa: E402
    MCTensor, add_mcn, approx, div_mcn, exp_mcn, from_float, grow_expn, mul_mcn, ones,
    renormalize, scaling_n, square_mcn, sub_mcn, zeros,
)

__all__ = [
    "__version__", "Precision", "fma_flags", "set_fma", "two_prod", "two_sum", "addmm_mcn",
    "bmm_mcn", "dot_mcn", "matmul_mcn", "mm_mcn", "mv_mcn", "reduce_sum", "set_default_plan",
    "MCTensor", "add_mcn", "approx", "div_mcn", "exp_mcn", "from_float", "grow_expn", "mul_mcn",
    "ones", "renormalize", "scaling_n", "square_mcn", "sub_mcn", "zeros",
]
