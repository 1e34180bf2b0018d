"""
SINDy candidate libraries, Euler rollout, the SINDy loss, pruning and symbolic output.

Library columns are ordered: bias (optional), monomials of degree 1..poly_order
(within a degree, index tuples from itertools.combinations_with_replacement, i.e.
lexicographic), then for j = 1..fourier_k a block of sin(j z_i) followed by a block
of cos(j z_i). The order is fixed; coefficient rows follow it.
"""

import itertools
import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import nn
from .converters import dict_to_config
from .errors import ConfigError, NotSindyModelError, NumericalError, ShapeError
from .nn import Tape, Var

logger = logging.getLogger(__name__)

PRINT_PRECISION = 3
_SUBSCRIPTS = str.maketrans("0123456789", "₀₁₂₃₄₅₆₇₈₉")
_UNSUBSCRIPTS = str.maketrans("₀₁₂₃₄₅₆₇₈₉", "0123456789")
_TERM_RE = re.compile(r"([+-])?\s*(\d+(?:\.\d+)?)(?:·(\S+))?")
BIAS_NAME = "1"


@dataclass
class LibrarySpec:
    """Candidate functions Θ(z) for a k-dimensional state.

    Attributes:
        include_bias: Leading constant column
        poly_order: Highest monomial degree (>= 1)
        fourier_k: Number of sin/cos frequency blocks (0 disables them)
    """
    include_bias: bool = True
    poly_order: int = 1
    fourier_k: int = 0

    def validate(self) -> None:
        if self.poly_order < 1:
            raise ConfigError(f"poly_order must be >= 1, got {self.poly_order}")
        if self.fourier_k < 0:
            raise ConfigError(f"fourier_k must be >= 0, got {self.fourier_k}")


def library_width(spec: LibrarySpec, k: int) -> int:
    """Number of library columns ℓ for a k-dimensional state."""
    n_poly = sum(comb(k + d - 1, d) for d in range(1, spec.poly_order + 1))
    return int(spec.include_bias) + n_poly + 2 * spec.fourier_k * k


@lru_cache(maxsize=64)
def _monomials(k: int, poly_order: int) -> Tuple[Tuple[int, ...], ...]:
    return tuple(combo for d in range(1, poly_order + 1)
                 for combo in itertools.combinations_with_replacement(range(k), d))


def _var_name(i: int) -> str:
    return f"z{i}".translate(_SUBSCRIPTS)


def term_names(spec: LibrarySpec, k: int) -> List[str]:
    """Printable name of every library column, in column order."""
    names = [BIAS_NAME] if spec.include_bias else []
    for combo in _monomials(k, spec.poly_order):
        parts = []
        for i in sorted(set(combo)):
            power = combo.count(i)
            parts.append(_var_name(i) if power == 1 else f"{_var_name(i)}^{power}")
        names.append("·".join(parts))
    for j in range(1, spec.fourier_k + 1):
        freq = "" if j == 1 else str(j)
        names += [f"sin({freq}{_var_name(i)})" for i in range(k)]
        names += [f"cos({freq}{_var_name(i)})" for i in range(k)]
    return names


def eval_library(z: np.ndarray, spec: LibrarySpec) -> np.ndarray:
    """Θ(z) for states on the last axis: [..., k] -> [..., ℓ]."""
    z = np.asarray(z)
    k = z.shape[-1]
    cols = []
    if spec.include_bias:
        cols.append(np.ones(z.shape[:-1] + (1,), dtype=z.dtype))
    cols.append(z)
    for combo in _monomials(k, spec.poly_order)[k:]:
        cols.append(np.prod(z[..., list(combo)], axis=-1, keepdims=True))
    for j in range(1, spec.fourier_k + 1):
        cols.append(np.sin(j * z))
        cols.append(np.cos(j * z))
    return np.concatenate(cols, axis=-1)


def _library_vjp(g: np.ndarray, z: np.ndarray, spec: LibrarySpec) -> np.ndarray:
    k = z.shape[-1]
    col = int(spec.include_bias)
    gz = np.array(g[..., col:col + k])
    col += k
    for combo in _monomials(k, spec.poly_order)[k:]:
        gc = g[..., col]
        for i in set(combo):
            rest = list(combo)
            rest.remove(i)
            gz[..., i] += gc * combo.count(i) * np.prod(z[..., rest], axis=-1)
        col += 1
    for j in range(1, spec.fourier_k + 1):
        gz += g[..., col:col + k] * j * np.cos(j * z)
        gz -= g[..., col + k:col + 2 * k] * j * np.sin(j * z)
        col += 2 * k
    return gz


def library(tape: Tape, z: Var, spec: LibrarySpec) -> Var:
    """Tape op for Θ(z)."""
    theta = eval_library(z.value, spec)
    return nn.make_op(tape, theta, [z], lambda out: z.accumulate(_library_vjp(out.grad, z.value, spec)))


# --- coefficients and rollout ----------------------------------------------

@dataclass(eq=False)
class SindyCoefficients:
    """Coefficients Ξ [ℓ x k] of one latent system, with its prune mask.

    ``xi`` and ``prune_mask`` may be views into a ParamStore, so prune() acts on
    the model in place.
    """
    xi: np.ndarray
    prune_mask: np.ndarray
    library: LibrarySpec = field(default_factory=LibrarySpec)
    h_step: float = 0.2
    k_steps: int = 5

    def __post_init__(self):
        if self.xi.shape != self.prune_mask.shape:
            raise ShapeError("SindyCoefficients", self.xi.shape, self.prune_mask.shape)
        if self.h_step <= 0:
            raise ConfigError(f"h_step must be > 0, got {self.h_step}")
        if self.k_steps < 1:
            raise ConfigError(f"k_steps must be >= 1, got {self.k_steps}")

    @property
    def k(self) -> int:
        return self.xi.shape[-1]

    @property
    def n_active(self) -> int:
        return int(self.prune_mask.sum())

    def masked_xi(self) -> np.ndarray:
        return np.where(self.prune_mask, self.xi, 0)


def rollout(tape: Tape, z: Var, xi: Var, spec: LibrarySpec, h_step: float, k_steps: int) -> Var:
    """k_steps explicit Euler sub-steps z <- z + h Θ(z) Ξ on the tape.

    ``z`` is [..., n, k] (at least 2-D); ``xi`` is [ℓ, k] or batched [..., ℓ, k].

    Raises:
        NumericalError: if a sub-step produces a non-finite state
    """
    width = library_width(spec, z.shape[-1])
    if xi.shape[-2:] != (width, z.shape[-1]):
        raise ShapeError("rollout", z.shape, xi.shape, (width, z.shape[-1]))
    for step in range(k_steps):
        dz = nn.matmul(tape, library(tape, z, spec), xi)
        z = nn.add(tape, z, nn.scale(tape, dz, h_step))
        if not np.all(np.isfinite(z.value)):
            raise NumericalError("SINDy rollout diverged", substep=step + 1)
    return z


def euler_rollout(z: np.ndarray, coeffs: SindyCoefficients) -> np.ndarray:
    """Advance states z [..., k] by one sample interval (k_steps Euler sub-steps)."""
    z = np.asarray(z, dtype=np.float64)
    flat = z.reshape(-1, z.shape[-1])
    out = rollout(Tape(), nn.constant(flat), nn.constant(coeffs.masked_xi().astype(np.float64)),
                  coeffs.library, coeffs.h_step, coeffs.k_steps)
    return out.value.reshape(z.shape)


def sindy_loss_term(tape: Tape, trajectory: Var, xi: Var, spec: LibrarySpec, h_step: float,
                    k_steps: int, lambda_reg: float) -> Var:
    """mean_t ||z_{t+1} - rollout(z_t)||^2 + lambda_reg ||Ξ||^2 for a [..., T, k] trajectory.

    ``xi`` should already carry its prune mask (ParamStore.masked).
    """
    if trajectory.value.ndim < 2 or trajectory.shape[-2] < 2:
        raise ConfigError(f"SINDy loss needs a trajectory of at least 2 steps, got shape {trajectory.shape}")
    current = nn.getitem(tape, trajectory, (Ellipsis, slice(None, -1), slice(None)))
    following = nn.getitem(tape, trajectory, (Ellipsis, slice(1, None), slice(None)))
    residual = nn.sub(tape, following, rollout(tape, current, xi, spec, h_step, k_steps))
    loss = nn.mean_sq_norm(tape, residual)
    if lambda_reg:
        loss = nn.add(tape, loss, nn.scale(tape, nn.sum_squares(tape, xi), lambda_reg))
    return loss


def sindy_loss(trajectory: np.ndarray, coeffs: SindyCoefficients, lambda_reg: float = 0.0) -> float:
    """SINDy consistency loss of a [T, k] (or batched [..., T, k]) latent trajectory."""
    tape = Tape()
    xi = nn.constant(coeffs.masked_xi().astype(np.float64))
    value = sindy_loss_term(tape, nn.constant(np.asarray(trajectory, dtype=np.float64)), xi, coeffs.library,
                            coeffs.h_step, coeffs.k_steps, lambda_reg)
    return float(value.value)


# --- pruning ----------------------------------------------------------------

def prune(coeffs: SindyCoefficients, tau: float) -> SindyCoefficients:
    """Mask out |xi| < tau and zero the pruned coefficients, in place.

    Monotone and idempotent: a pruned entry never comes back.
    """
    if tau < 0:
        raise ConfigError(f"prune threshold must be >= 0, got {tau}")
    coeffs.prune_mask &= ~(np.abs(coeffs.xi) < tau)
    coeffs.xi[~coeffs.prune_mask] = 0
    return coeffs


def prune_model(model, tau: float) -> int:
    """Prune every coefficient matrix of a model; returns the total number of pruned entries."""
    pruned = 0
    for label, coeffs in model.sindy_coefficients():
        prune(coeffs, tau)
        n_off = int((~coeffs.prune_mask).sum())
        logger.debug("%s: %d of %d coefficients pruned", label, n_off, coeffs.prune_mask.size)
        pruned += n_off
    return pruned


# --- symbolic systems -------------------------------------------------------

@dataclass
class Term:
    coeff: float
    monomial: str


@dataclass
class Equation:
    lhs: str
    terms: List[Term] = field(default_factory=list)


@dataclass
class HeadSystem:
    layer: int
    head: int
    equations: List[Equation] = field(default_factory=list)


@dataclass
class SymbolicSystem:
    """Discovered ODEs, one block per (layer, head)."""
    blocks: List[HeadSystem] = field(default_factory=list)
    precision: int = PRINT_PRECISION

    def to_matrices(self, spec: LibrarySpec, k: int) -> Dict[Tuple[int, int], np.ndarray]:
        """Rebuild the [ℓ x k] coefficient matrix of every block (absent terms are 0)."""
        names = term_names(spec, k)
        column = {name: i for i, name in enumerate(names)}
        out = {}
        for block in self.blocks:
            xi = np.zeros((len(names), k))
            for a, eq in enumerate(block.equations):
                for term in eq.terms:
                    if term.monomial not in column:
                        raise ConfigError(f"unknown library term {term.monomial!r} in L{block.layer} H{block.head}")
                    xi[column[term.monomial], a] = term.coeff
            out[(block.layer, block.head)] = xi
        return out


def _lhs(a: int) -> str:
    return f"ż{a}".translate(_SUBSCRIPTS)


def symbolic_system(blocks: Sequence[Tuple[int, int, SindyCoefficients]],
                    precision: int = PRINT_PRECISION) -> SymbolicSystem:
    """Build a SymbolicSystem from (layer, head, coefficients) triples.

    Only unpruned coefficients that are non-zero at ``precision`` decimals become terms.
    """
    system = SymbolicSystem(precision=precision)
    for layer, head, coeffs in blocks:
        names = term_names(coeffs.library, coeffs.k)
        if len(names) != coeffs.xi.shape[0]:
            raise ShapeError("symbolic_system", coeffs.xi.shape, (len(names), coeffs.k))
        rounded = np.round(np.where(coeffs.prune_mask, coeffs.xi, 0.0).astype(np.float64), precision)
        head_system = HeadSystem(layer=layer, head=head)
        for a in range(coeffs.k):
            terms = [Term(coeff=float(rounded[c, a]), monomial=names[c])
                     for c in range(len(names)) if rounded[c, a] != 0]
            head_system.equations.append(Equation(lhs=_lhs(a), terms=terms))
        system.blocks.append(head_system)
    return system


def extract_odes(model, precision: int = PRINT_PRECISION) -> SymbolicSystem:
    """Read the per-head ODEs out of a model with a SINDy-Attention encoder.

    Raises:
        NotSindyModelError: if the encoder has no SINDy-Attention layers
    """
    blocks = model.head_coefficients()
    if not blocks:
        raise NotSindyModelError(
            f"encoder variant {model.config.encoder.variant!r} has no SINDy-Attention heads to extract")
    return symbolic_system(blocks, precision=precision)


def _format_term(term: Term, precision: int) -> str:
    number = f"{term.coeff:.{precision}f}"
    return number if term.monomial == BIAS_NAME else f"{number}·{term.monomial}"


def format_equation(eq: Equation, precision: int = PRINT_PRECISION) -> str:
    if not eq.terms:
        return f"{eq.lhs} = 0"
    rhs = _format_term(eq.terms[0], precision)
    for term in eq.terms[1:]:
        text = _format_term(term, precision)
        rhs += f" {text}" if text.startswith("-") else f" + {text}"
    return f"{eq.lhs} = {rhs}"


def format_system(system: SymbolicSystem) -> str:
    """Render as text:

        L₀:
          H₀:
            ż₀ = -0.699·z₀ + 0.275·z₂
    """
    lines = []
    layer = None
    for block in system.blocks:
        if block.layer != layer:
            layer = block.layer
            lines.append(f"L{layer}:".translate(_SUBSCRIPTS))
        lines.append(f"  H{block.head}:".translate(_SUBSCRIPTS))
        lines += ["    " + format_equation(eq, system.precision) for eq in block.equations]
    return "\n".join(lines) + "\n"


def parse_system(text: str) -> SymbolicSystem:
    """Inverse of format_system (coefficients at the printed precision).

    The precision is read back from the number of decimals printed.
    """
    system = SymbolicSystem()
    layer = None
    decimals = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("L") and line.endswith(":"):
            layer = int(line[1:-1].translate(_UNSUBSCRIPTS))
        elif line.startswith("H") and line.endswith(":"):
            if layer is None:
                raise ConfigError(f"line {lineno}: head block before any layer header")
            system.blocks.append(HeadSystem(layer=layer, head=int(line[1:-1].translate(_UNSUBSCRIPTS))))
        elif "=" in line:
            if not system.blocks:
                raise ConfigError(f"line {lineno}: equation outside a head block")
            lhs, rhs = (part.strip() for part in line.split("=", 1))
            terms = []
            for sign, number, monomial in ([] if rhs == "0" else _TERM_RE.findall(rhs)):
                coeff = float(number) * (-1.0 if sign == "-" else 1.0)
                decimals.append(len(number.partition(".")[2]))
                terms.append(Term(coeff=coeff, monomial=monomial or BIAS_NAME))
            system.blocks[-1].equations.append(Equation(lhs=lhs, terms=terms))
        else:
            raise ConfigError(f"line {lineno}: cannot parse {raw!r}")
    if decimals:
        system.precision = max(decimals)
    return system


def system_to_json(system: SymbolicSystem) -> str:
    payload = {
        "precision": system.precision,
        "blocks": [{
            "layer": b.layer,
            "head": b.head,
            "equations": [{"lhs": eq.lhs, "terms": [{"coeff": t.coeff, "monomial": t.monomial} for t in eq.terms]}
                          for eq in b.equations],
        } for b in system.blocks],
    }
    return json.dumps(payload, ensure_ascii=False, indent=2)


def system_from_json(text: str) -> SymbolicSystem:
    return dict_to_config(json.loads(text), SymbolicSystem)
