"""
Minimal reverse-mode building blocks on numpy arrays.

A forward pass records one backward closure per primitive on a Tape; Tape.backward
replays them in reverse order, accumulating gradients into the Vars that fed each
op. Every primitive broadcasts over leading (batch) axes, so a block written for a
single [n x d] sample runs unchanged on a [B x n x d] batch.

Parameters live in a ParamStore, which owns their gradient slots, optional
constant masks (used for pruned SINDy coefficients) and the checkpoint format.
"""

import json
import logging
import struct
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError, TapeError
from .precision import get_dtype
from .rng import make_rng

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5


class Var:
    """A value recorded on a tape, plus its accumulated gradient."""

    __slots__ = ("value", "grad", "name", "requires_grad")

    def __init__(self, value, name: Optional[str] = None, requires_grad: bool = True):
        self.value = np.asarray(value)
        self.grad = None
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.value.shape)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += grad

    def __repr__(self):
        return f"Var(name={self.name!r}, shape={self.shape})"


def constant(value) -> Var:
    """Wrap an array that never needs a gradient (data, masks, fixed encodings)."""
    return Var(np.asarray(value), requires_grad=False)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Ordered record of backward closures for one forward pass."""

    def __init__(self):
        self._backward: List[Callable[[], None]] = []
        self._consumed = False

    def __len__(self):
        return len(self._backward)

    def record(self, fn: Callable[[], None]) -> None:
        if self._consumed:
            raise TapeError("cannot record on a tape whose backward pass already ran")
        self._backward.append(fn)

    def backward(self, out: Var, seed_grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(out)/d(.) into every Var reachable on this tape.

        Raises:
            TapeError: if backward already ran on this tape
        """
        if self._consumed:
            raise TapeError("backward already ran on this tape; run a new forward pass")
        self._consumed = True
        out.accumulate(np.ones_like(out.value) if seed_grad is None else np.asarray(seed_grad))
        for fn in reversed(self._backward):
            fn()


def make_op(tape: Tape, value: np.ndarray, parents: Sequence[Var], backward: Callable[[Var], None]) -> Var:
    out = Var(value, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        tape.record(lambda: out.grad is not None and backward(out))
    return out


# --- linear algebra ---------------------------------------------------------

def affine(tape: Tape, x: Var, W: Var, b: Optional[Var] = None) -> Var:
    """y = x W (+ b) over the last axis of x."""
    if x.shape[-1] != W.shape[0] or W.value.ndim != 2:
        raise ShapeError("affine", x.shape, W.shape)
    if b is not None and b.shape != (W.shape[1],):
        raise ShapeError("affine bias", W.shape, b.shape)
    y = x.value @ W.value
    if b is not None:
        y = y + b.value
    parents = [x, W] + ([b] if b is not None else [])

    def backward(out):
        g = out.grad
        x.accumulate(g @ W.value.T)
        flat_x = x.value.reshape(-1, W.shape[0])
        flat_g = g.reshape(-1, W.shape[1])
        W.accumulate(flat_x.T @ flat_g)
        if b is not None:
            b.accumulate(flat_g.sum(axis=0))

    return make_op(tape, y, parents, backward)


def matmul(tape: Tape, a: Var, b: Var) -> Var:
    """Batched matrix product with numpy broadcasting over leading axes."""
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    y = np.matmul(a.value, b.value)

    def backward(out):
        g = out.grad
        a.accumulate(np.matmul(g, np.swapaxes(b.value, -1, -2)))
        b.accumulate(np.matmul(np.swapaxes(a.value, -1, -2), g))

    return make_op(tape, y, [a, b], backward)


# --- elementwise ------------------------------------------------------------

def add(tape: Tape, a: Var, b: Var) -> Var:
    def backward(out):
        a.accumulate(out.grad)
        b.accumulate(out.grad)

    return make_op(tape, a.value + b.value, [a, b], backward)


def sub(tape: Tape, a: Var, b: Var) -> Var:
    def backward(out):
        a.accumulate(out.grad)
        b.accumulate(-out.grad)

    return make_op(tape, a.value - b.value, [a, b], backward)


def mul(tape: Tape, a: Var, b: Var) -> Var:
    def backward(out):
        a.accumulate(out.grad * b.value)
        b.accumulate(out.grad * a.value)

    return make_op(tape, a.value * b.value, [a, b], backward)


def scale(tape: Tape, a: Var, c: float) -> Var:
    return make_op(tape, a.value * c, [a], lambda out: a.accumulate(out.grad * c))


def relu(tape: Tape, x: Var) -> Var:
    active = x.value > 0
    return make_op(tape, np.where(active, x.value, 0), [x], lambda out: x.accumulate(out.grad * active))


def sigmoid(tape: Tape, x: Var) -> Var:
    # split by sign so exp never overflows
    v = x.value
    e = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1 / (1 + e), e / (1 + e))
    return make_op(tape, y, [x], lambda out: x.accumulate(out.grad * y * (1 - y)))


def tanh(tape: Tape, x: Var) -> Var:
    y = np.tanh(x.value)
    return make_op(tape, y, [x], lambda out: x.accumulate(out.grad * (1 - y * y)))


def sin(tape: Tape, x: Var) -> Var:
    return make_op(tape, np.sin(x.value), [x], lambda out: x.accumulate(out.grad * np.cos(x.value)))


# --- normalization ----------------------------------------------------------

def row_softmax(tape: Tape, x: Var, mask: Optional[np.ndarray] = None) -> Var:
    """Softmax over the last axis, stabilized by subtracting the row max.

    Args:
        mask: Optional boolean array broadcastable to x; False entries get weight 0
    """
    if np.any(np.isnan(x.value)):
        raise NumericalError("row_softmax received NaN input")
    scores = x.value if mask is None else np.where(mask, x.value, -np.inf)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(out):
        g = out.grad
        x.accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return make_op(tape, y, [x], backward)


def layer_norm(tape: Tape, x: Var, gain: Var, bias: Var, eps: float = LAYER_NORM_EPS) -> Var:
    """Normalize the last axis to zero mean / unit variance, then apply gain and bias."""
    d = x.shape[-1]
    if d < 1 or gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.value.mean(axis=-1, keepdims=True)
    centered = x.value - mu
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    y = xhat * gain.value + bias.value

    def backward(out):
        g = out.grad
        gxhat = g * gain.value
        x.accumulate(inv / d * (d * gxhat - gxhat.sum(axis=-1, keepdims=True)
                                - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)))
        gain.accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        bias.accumulate(g.reshape(-1, d).sum(axis=0))

    return make_op(tape, y, [x, gain, bias], backward)


# --- shape ------------------------------------------------------------------

def reshape(tape: Tape, x: Var, shape: Tuple[int, ...]) -> Var:
    return make_op(tape, x.value.reshape(shape), [x], lambda out: x.accumulate(out.grad.reshape(x.shape)))


def swapaxes(tape: Tape, x: Var, a: int, b: int) -> Var:
    return make_op(tape, np.swapaxes(x.value, a, b), [x], lambda out: x.accumulate(np.swapaxes(out.grad, a, b)))


def getitem(tape: Tape, x: Var, index) -> Var:
    """Basic (slice / integer) indexing."""

    def backward(out):
        full = np.zeros_like(x.value)
        full[index] = out.grad
        x.accumulate(full)

    return make_op(tape, x.value[index], [x], backward)


def concat(tape: Tape, xs: Sequence[Var], axis: int = -1) -> Var:
    sizes = [v.shape[axis] for v in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(out):
        for v, g in zip(xs, np.split(out.grad, splits, axis=axis)):
            v.accumulate(g)

    return make_op(tape, np.concatenate([v.value for v in xs], axis=axis), xs, backward)


def stack(tape: Tape, xs: Sequence[Var], axis: int = 0) -> Var:
    def backward(out):
        for i, v in enumerate(xs):
            v.accumulate(np.take(out.grad, i, axis=axis))

    return make_op(tape, np.stack([v.value for v in xs], axis=axis), xs, backward)


# --- convolution ------------------------------------------------------------

def conv_transpose2d(tape: Tape, x: Var, w: Var, b: Optional[Var], stride: int = 2, padding: int = 1) -> Var:
    """Transposed 2-D convolution.

    Args:
        x: [B, C_in, H, W]
        w: [C_in, C_out, K, K]
        b: [C_out] or None

    Output spatial size is (H - 1) * stride - 2 * padding + K.
    """
    if x.value.ndim != 4 or w.value.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError("conv_transpose2d", x.shape, w.shape)
    n, _, h, wd = x.shape
    c_out, k = w.shape[1], w.shape[2]
    full_h, full_w = (h - 1) * stride + k, (wd - 1) * stride + k
    full = np.zeros((n, c_out, full_h, full_w), dtype=np.result_type(x.value, w.value))
    for ki in range(k):
        for kj in range(k):
            full[:, :, ki:ki + stride * h:stride, kj:kj + stride * wd:stride] += np.einsum(
                "bchw,cd->bdhw", x.value, w.value[:, :, ki, kj])
    out_h, out_w = full_h - 2 * padding, full_w - 2 * padding
    y = full[:, :, padding:padding + out_h, padding:padding + out_w]
    if b is not None:
        y = y + b.value[None, :, None, None]
    parents = [x, w] + ([b] if b is not None else [])

    def backward(out):
        g_full = np.zeros_like(full)
        g_full[:, :, padding:padding + out_h, padding:padding + out_w] = out.grad
        gx = np.zeros_like(x.value)
        gw = np.zeros_like(w.value)
        for ki in range(k):
            for kj in range(k):
                patch = g_full[:, :, ki:ki + stride * h:stride, kj:kj + stride * wd:stride]
                gx += np.einsum("bdhw,cd->bchw", patch, w.value[:, :, ki, kj])
                gw[:, :, ki, kj] = np.einsum("bchw,bdhw->cd", x.value, patch)
        x.accumulate(gx)
        w.accumulate(gw)
        if b is not None:
            b.accumulate(out.grad.sum(axis=(0, 2, 3)))

    return make_op(tape, np.ascontiguousarray(y), parents, backward)


def conv1x1(tape: Tape, x: Var, w: Var, b: Optional[Var] = None) -> Var:
    """Pointwise convolution: x [B, C_in, H, W], w [C_in, C_out] -> [B, C_out, H, W]."""
    if x.value.ndim != 4 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError("conv1x1", x.shape, w.shape)
    y = np.einsum("bchw,cd->bdhw", x.value, w.value)
    if b is not None:
        y = y + b.value[None, :, None, None]
    parents = [x, w] + ([b] if b is not None else [])

    def backward(out):
        g = out.grad
        x.accumulate(np.einsum("bdhw,cd->bchw", g, w.value))
        w.accumulate(np.einsum("bchw,bdhw->cd", x.value, g))
        if b is not None:
            b.accumulate(g.sum(axis=(0, 2, 3)))

    return make_op(tape, y, parents, backward)


# --- reductions -------------------------------------------------------------

def masked_mse(tape: Tape, pred: Var, target: np.ndarray, mask: Optional[np.ndarray] = None) -> Var:
    """Mean squared error over the entries where ``mask`` (broadcast on the last axis) is True."""
    if pred.shape != target.shape:
        raise ShapeError("masked_mse", pred.shape, target.shape)
    weight = np.ones(pred.shape[-1]) if mask is None else np.asarray(mask, dtype=np.float64)
    count = float(weight.sum()) * (pred.value.size // pred.shape[-1])
    if count == 0:
        raise ConfigError("masked_mse: mask selects no entries")
    diff = (pred.value - target) * weight.astype(pred.value.dtype)
    value = np.asarray((diff ** 2).sum() / count, dtype=pred.value.dtype)
    return make_op(tape, value, [pred], lambda out: pred.accumulate(out.grad * 2.0 * diff / count))


def mean_sq_norm(tape: Tape, x: Var) -> Var:
    """Squared norm over the last axis, averaged over all leading axes."""
    rows = x.value.size // x.shape[-1]
    value = np.asarray((x.value ** 2).sum() / rows, dtype=x.value.dtype)
    return make_op(tape, value, [x], lambda out: x.accumulate(out.grad * 2.0 * x.value / rows))


def sum_squares(tape: Tape, x: Var) -> Var:
    value = np.asarray((x.value ** 2).sum(), dtype=x.value.dtype)
    return make_op(tape, value, [x], lambda out: x.accumulate(out.grad * 2.0 * x.value))


# --- parameters -------------------------------------------------------------

_CKPT_MAGIC = b"SHCK"
_CKPT_PREFIX = struct.Struct("<4sI")


class ParamStore:
    """Named parameters, their gradient slots and optional constant masks.

    Weight matrices are initialized uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a
    PCG64 stream seeded with ``init_seed``; biases start at 0, gains at 1.
    """

    def __init__(self, init_seed: int = 0):
        self.init_seed = init_seed
        self._rng = make_rng(init_seed)
        self._params: Dict[str, Var] = {}
        self._masks: Dict[str, np.ndarray] = {}

    # construction
    def add(self, name: str, value: np.ndarray) -> Var:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        var = Var(np.array(value, dtype=get_dtype()), name=name)
        var.grad = np.zeros_like(var.value)
        self._params[name] = var
        return var

    def uniform(self, name: str, shape: Tuple[int, ...], fan_in: int) -> Var:
        limit = 1.0 / np.sqrt(fan_in)
        return self.add(name, self._rng.uniform(-limit, limit, size=shape))

    def zeros(self, name: str, shape: Tuple[int, ...]) -> Var:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: Tuple[int, ...]) -> Var:
        return self.add(name, np.ones(shape))

    # access
    def __getitem__(self, name: str) -> Var:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> List[str]:
        return list(self._params)

    # gradients and masks
    def zero_grad(self) -> None:
        for var in self._params.values():
            var.grad[...] = 0

    def set_mask(self, name: str, mask: np.ndarray) -> None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self._params[name].shape:
            raise ShapeError("set_mask", self._params[name].shape, mask.shape)
        self._masks[name] = mask

    def mask(self, name: str) -> Optional[np.ndarray]:
        return self._masks.get(name)

    def masked(self, tape: Tape, name: str) -> Var:
        """The parameter with its mask applied; masked entries get zero gradient."""
        var = self._params[name]
        mask = self._masks.get(name)
        if mask is None:
            return var
        return mul(tape, var, constant(mask.astype(var.value.dtype)))

    def group(self, tape: Tape, prefix: str) -> Dict[str, Var]:
        """Parameters directly under ``prefix.``, keyed by short name, masks applied."""
        head = prefix + "."
        return {name[len(head):]: self.masked(tape, name) for name in self._params
                if name.startswith(head) and "." not in name[len(head):]}

    def apply_masks(self) -> None:
        for name, mask in self._masks.items():
            self._params[name].value[~mask] = 0

    # size
    @property
    def n_params(self) -> int:
        return int(sum(v.value.size for v in self._params.values()))

    # state
    def state_dict(self) -> Dict[str, Dict[str, np.ndarray]]:
        return {"params": {k: v.value.copy() for k, v in self._params.items()},
                "masks": {k: m.copy() for k, m in self._masks.items()}}

    def load_state_dict(self, state: Dict[str, Dict[str, np.ndarray]]) -> None:
        for name, value in state["params"].items():
            if name not in self._params:
                raise ConfigError(f"unknown parameter {name!r} in state")
            if value.shape != self._params[name].shape:
                raise ShapeError(f"load_state_dict {name}", self._params[name].shape, value.shape)
            self._params[name].value[...] = value
        self._masks = {k: np.array(m, dtype=bool) for k, m in state.get("masks", {}).items()}

    def to_bytes(self, extra: Optional[dict] = None) -> bytes:
        """Checkpoint bytes: prefix, JSON manifest, little-endian payload in manifest order.

        The manifest holds names, shapes, dtype and init_seed, the names of masked
        parameters (their masks follow the parameters as one byte per entry), and
        any ``extra`` metadata.
        """
        names = self.names()
        dtype = np.dtype(self._params[names[0]].value.dtype if names else get_dtype()).newbyteorder("<")
        mask_names = [n for n in names if n in self._masks]
        manifest = {
            "names": names,
            "shapes": [list(self._params[n].shape) for n in names],
            "dtype": dtype.str,
            "init_seed": self.init_seed,
            "masks": mask_names,
        }
        if extra:
            manifest["extra"] = extra
        header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
        payload = b"".join(np.ascontiguousarray(self._params[n].value, dtype=dtype).tobytes() for n in names)
        payload += b"".join(self._masks[n].astype(np.uint8).tobytes() for n in mask_names)
        return _CKPT_PREFIX.pack(_CKPT_MAGIC, len(header)) + header + payload

    @staticmethod
    def read_manifest(data: bytes) -> Tuple[dict, int]:
        """Parse the checkpoint manifest; returns it with the payload offset."""
        if len(data) < _CKPT_PREFIX.size:
            raise ConfigError("checkpoint too short")
        magic, length = _CKPT_PREFIX.unpack_from(data, 0)
        if magic != _CKPT_MAGIC:
            raise ConfigError(f"not a shredlab checkpoint (magic {magic!r})")
        end = _CKPT_PREFIX.size + length
        if end > len(data):
            raise ConfigError(f"checkpoint manifest length {length} exceeds file size {len(data)}")
        return json.loads(data[_CKPT_PREFIX.size:end].decode("utf-8")), end

    def load_bytes(self, data: bytes) -> dict:
        """Load parameter values and masks from checkpoint bytes into this store."""
        manifest, offset = self.read_manifest(data)
        dtype = np.dtype(manifest["dtype"])
        shapes = dict(zip(manifest["names"], manifest["shapes"]))
        params, masks = {}, {}
        try:
            for name in manifest["names"]:
                count = int(np.prod(shapes[name]))
                params[name] = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shapes[name])
                offset += count * dtype.itemsize
            for name in manifest["masks"]:
                count = int(np.prod(shapes[name]))
                masks[name] = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset).reshape(shapes[name]) != 0
                offset += count
        except ValueError as e:
            raise ConfigError(f"checkpoint payload truncated: {e}") from e
        if offset != len(data):
            raise ConfigError(f"checkpoint payload size mismatch: expected {offset} bytes, got {len(data)}")
        self.load_state_dict({"params": params, "masks": masks})
        logger.debug("loaded %d parameters (%d masked) from checkpoint", len(params), len(masks))
        return manifest
