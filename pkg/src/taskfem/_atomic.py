"""Indivisible float64 accumulation usable from nogil numba code."""

from numba import types
from numba.core import cgutils
from numba.extending import intrinsic


@intrinsic
def atomic_add(typingctx, arr, idx, val):
    """``arr[idx] += val`` as a single ``atomicrmw fadd``; returns the old value."""
    if not (isinstance(arr, types.Array) and arr.dtype == types.float64 and arr.ndim == 1):
        return None
    sig = types.float64(arr, idx, val)

    def codegen(context, builder, signature, args):
        aryty = signature.args[0]
        ary = context.make_array(aryty)(context, builder, args[0])
        index = context.cast(builder, args[1], signature.args[1], types.intp)
        value = context.cast(builder, args[2], signature.args[2], types.float64)
        ptr = cgutils.get_item_pointer(context, builder, aryty, ary, [index], wraparound=False)
        return builder.atomic_rmw("fadd", ptr, value, "monotonic")

    return sig, codegen
