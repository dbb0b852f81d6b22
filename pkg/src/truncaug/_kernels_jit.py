"""Numba lane: the shared kernel source compiled under @njit.

The source of :mod:`truncaug._kernels_impl` is re-executed into this
module's namespace so the compiled functions resolve their helpers to the
compiled versions, while the plain module stays untouched for the
pure-numpy lane.
"""

import numba

from . import _kernels_impl as _impl

with open(_impl.__file__) as _fh:
    _SOURCE = _fh.read()

exec(compile(_SOURCE, _impl.__file__, "exec"), globals())

_decorate = numba.njit(cache=True, nogil=True)
for _name in _impl.KERNELS:
    globals()[_name] = _decorate(globals()[_name])
