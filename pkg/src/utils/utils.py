import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Sequence, Union

import numpy as np
import sympy

from .exceptions import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

BISECTION_STEPS = 80


def load_toml(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a TOML problem file.

    :param path: The path to the file.
    :return: The parsed document.
    """
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config file {path} is not valid TOML: {e}") from e


def compile_expression(text: Union[str, float, int], variables: Sequence[str]) -> Callable[..., np.ndarray]:
    """
    Compile a scalar expression into a vectorized numpy function.

    Args:
        text: the expression, e.g. "(2+sin(2*pi*y))*(2+sin(2*pi*z))".
        variables: names of the positional arguments of the compiled function.

    Returns:
        A function of ``len(variables)`` arrays returning an array of their broadcast shape.
    """
    symbols = sympy.symbols(list(variables))
    local = {name: sym for name, sym in zip(variables, symbols)}
    try:
        expr = sympy.sympify(text, locals=local)
    except (sympy.SympifyError, SyntaxError, TypeError) as e:
        raise ConfigError(f"cannot parse expression '{text}': {e}") from e
    unknown = sorted(str(s) for s in expr.free_symbols if str(s) not in local)
    if unknown:
        raise ConfigError(f"expression '{text}' uses undeclared symbols {unknown}; allowed {list(variables)}")
    fn = sympy.lambdify(symbols, expr, modules="numpy")

    def evaluate(*args: Any) -> np.ndarray:
        arrays = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
        out = np.asarray(fn(*arrays), dtype=float)
        return np.broadcast_to(out, arrays[0].shape).copy()

    evaluate.__doc__ = str(expr)
    return evaluate


def bisect_increasing(
    fn: Callable[[np.ndarray], np.ndarray],
    target: Any,
    lo: Any = 0.0,
    hi: Any = 1.0,
    steps: int = BISECTION_STEPS,
) -> np.ndarray:
    """
    Solve fn(t) = target for a nondecreasing fn, elementwise, by bisection.

    The upper bracket is doubled until fn(hi) >= target.

    :param fn: vectorized nondecreasing function.
    :param target: array of target values.
    :param lo: lower bracket, fn(lo) <= target assumed.
    :param hi: initial upper bracket.
    :param steps: number of halvings.
    """
    target = np.asarray(target, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(1100):
            short = fn(hi) < target
            if not np.any(short):
                break
            lo = np.where(short, hi, lo)
            hi = np.where(short, 2.0 * hi, hi)
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            below = fn(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def dyadic_grid(n: int = 200, lo: float = 1e-3, hi: float = 1e3) -> np.ndarray:
    """Geometric grid of ``n`` points on [lo, hi]."""
    return np.geomspace(lo, hi, n)


def ensure_folder(folder_path: Union[str, Path]) -> Path:
    """
    Create a folder (and its parents) if needed.

    :param folder_path: The folder to create.
    :return: The folder as a Path.
    """
    path = Path(folder_path)
    path.mkdir(parents=True, exist_ok=True)
    return path
