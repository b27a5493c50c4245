"""Dense tensors recorded on an explicit tape for reverse-mode differentiation."""

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_TAPES = []


def current_tape():
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """A dense array plus the bookkeeping needed to live on a :class:`Tape`.

    Outside an active tape a tensor is an immutable value. Operations on
    tensors with ``requires_grad`` set are recorded only while a tape is
    active.
    """

    __slots__ = ("data", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.node_id = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)


class _Node:
    __slots__ = ("tensor", "parents", "backward")

    def __init__(self, tensor, parents, backward):
        self.tensor = tensor
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block
    are appended in execution order, which is a topological order.
    """

    def __init__(self):
        self.nodes = []
        self._index = {}
        self._leaves = []
        self.consumed = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def _register(self, t):
        key = id(t)
        nid = self._index.get(key)
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(_Node(t, (), None))
            self._index[key] = nid
            self._leaves.append(nid)
            t.node_id = nid
        return nid

    def record(self, out, parents, backward):
        if self.consumed:
            raise RuntimeError("tape already consumed by backward()")
        pids = tuple(self._register(p) if p.requires_grad else None for p in parents)
        nid = len(self.nodes)
        self.nodes.append(_Node(out, pids, backward))
        self._index[id(out)] = nid
        out.node_id = nid

    def backward(self, root):
        """Propagate d(root)/d(node) to every leaf; returns a :class:`Gradients`."""
        if self.consumed:
            raise RuntimeError("tape already consumed by backward()")
        if root.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {root.shape}")
        grads = Gradients()
        rid = self._index.get(id(root))
        self.consumed = True
        if rid is None:
            self._release()
            return grads
        acc = {rid: np.ones(root.shape, dtype=root.dtype)}
        for nid in range(rid, -1, -1):
            g = acc.pop(nid, None)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.backward is None:
                grads._store(node.tensor, g)
                continue
            parent_grads = node.backward(g)
            for pid, pg in zip(node.parents, parent_grads):
                if pid is None or pg is None:
                    continue
                prev = acc.get(pid)
                acc[pid] = pg if prev is None else prev + pg
        self._release()
        return grads

    def _release(self):
        for node in self.nodes:
            node.tensor.node_id = None
        self.nodes = []
        self._index = {}


def backward(tape, root):
    return tape.backward(root)


class Gradients:
    """Mapping from leaf tensors to their gradient arrays."""

    def __init__(self):
        self._grads = {}

    def _store(self, t, g):
        self._grads[id(t)] = (t, g)

    def __getitem__(self, t):
        try:
            return self._grads[id(t)][1]
        except KeyError:
            raise KeyError(f"no gradient reached {t!r}") from None

    def get(self, t, default=None):
        entry = self._grads.get(id(t))
        return default if entry is None else entry[1]

    def __contains__(self, t):
        return id(t) in self._grads

    def __len__(self):
        return len(self._grads)

    def for_params(self, params, fill_zeros=True):
        """Gradients keyed by parameter name; unreached parameters get zeros."""
        out = {}
        for name, p in params.items():
            g = self.get(p)
            if g is None and fill_zeros:
                g = np.zeros_like(p.data)
            if g is not None:
                out[name] = g
        return out
