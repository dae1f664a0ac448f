"""
Exact counting of zero-energy states: the D_n recursion, its closed form, the regime
classification of (d, r), and the domination lemma s_n <= D_n.
"""
import cmath
import math
from enum import Enum
from typing import Optional, Sequence

from pydantic import BaseModel, ConfigDict, field_serializer


class Regime(str, Enum):
    FRUSTRATED = "Frustrated"
    CRITICAL = "Critical"
    ENTANGLED_UNFRUSTRATED = "EntangledUnfrustrated"
    PRODUCT_SOLUBLE = "ProductSoluble"


class CountReport(BaseModel):
    """
    Counting summary for one (d, r) pair.

    Big integers in `d_sequence` serialize as decimal strings, roots as [re, im] pairs.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    d: int
    r: int
    d_sequence: list[int]
    roots: tuple[complex, complex]
    theta: Optional[float] = None
    regime: Regime
    first_frustrated_length: Optional[int] = None

    @field_serializer("d_sequence")
    def _decimal_strings(self, values: list[int]) -> list[str]:
        return [str(v) for v in values]

    @field_serializer("roots")
    def _root_pairs(self, roots: tuple[complex, complex]) -> list[list[float]]:
        return [[z.real, z.imag] for z in roots]


class DominationResult(BaseModel):
    """Outcome of checking a candidate sequence s against the recursion inequality."""
    ok: bool
    slack: list[int] = []
    violation_index: Optional[int] = None


def _check_pair(d: int, r: int) -> None:
    if d < 2:
        raise ValueError(f"local dimension must be >= 2, got {d}")
    if not 1 <= r <= d * d:
        raise ValueError(f"rank must be in 1..{d * d}, got {r}")


def solution_count_sequence(d: int, r: int, n_max: int) -> list[int]:
    """
    D_0..D_{n_max} from D_n = d·D_{n-1} - r·D_{n-2}, D_0 = 1, D_1 = d, in exact integers.
    """
    _check_pair(d, r)
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    counts = [1, d]
    for _ in range(2, n_max + 1):
        counts.append(d * counts[-1] - r * counts[-2])
    return counts


def characteristic_roots(d: int, r: int) -> tuple[complex, complex]:
    """Roots f >= g (by real part, then imaginary part) of x² - d·x + r."""
    root = cmath.sqrt(d * d / 4 - r)
    return complex(d / 2 + root), complex(d / 2 - root)


def frustration_angle(d: int, r: int) -> Optional[float]:
    """theta with cos(theta) = d / (2·sqrt(r)), defined only when 4r > d²."""
    if 4 * r <= d * d:
        return None
    return math.acos(d / (2 * math.sqrt(r)))


def closed_form_count(d: int, r: int, n: int) -> int | float:
    """
    D_n = (f^{n+1} - g^{n+1}) / (f - g).

    Exact integer arithmetic when the roots are integers (discriminant a perfect square,
    including the critical case f = g where D_n = (n+1)·f^n); floating point otherwise,
    using r^{n/2}·sin((n+1)θ)/sin θ when the roots are complex.
    """
    _check_pair(d, r)
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    disc = d * d - 4 * r
    if disc >= 0:
        root = math.isqrt(disc)
        if root * root == disc:
            f, g = (d + root) // 2, (d - root) // 2
            if f == g:
                return (n + 1) * f**n
            return (f ** (n + 1) - g ** (n + 1)) // (f - g)
        f = (d + math.sqrt(disc)) / 2
        g = (d - math.sqrt(disc)) / 2
        return (f ** (n + 1) - g ** (n + 1)) / (f - g)
    theta = frustration_angle(d, r)
    return r ** (n / 2) * math.sin((n + 1) * theta) / math.sin(theta)


def first_nonpositive_index(counts: Sequence[int]) -> Optional[int]:
    return next((n for n, value in enumerate(counts) if value <= 0), None)


def frustration_onset_bound(d: int, r: int) -> Optional[int]:
    """Smallest n with (n+1)·θ >= π, or None outside the frustrated regime."""
    theta = frustration_angle(d, r)
    if theta is None:
        return None
    return max(math.ceil(math.pi / theta - 1 - 1e-12), 0)


def classify_regime(d: int, r: int) -> Regime:
    """
    Frustrated if 4r > d², ProductSoluble if r < d, Critical if 4r = d², otherwise
    EntangledUnfrustrated. ProductSoluble takes precedence over Critical (only d=2, r=1).
    """
    _check_pair(d, r)
    if 4 * r > d * d:
        return Regime.FRUSTRATED
    if r < d:
        return Regime.PRODUCT_SOLUBLE
    if 4 * r == d * d:
        return Regime.CRITICAL
    return Regime.ENTANGLED_UNFRUSTRATED


def count_report(d: int, r: int, n_max: int) -> CountReport:
    """
    Full counting report: D_0..D_{n_max}, roots, angle, regime and, in the frustrated
    regime, the first length n with D_n <= 0 (extending the sequence as far as needed).
    """
    regime = classify_regime(d, r)
    counts = solution_count_sequence(d, r, n_max)

    first_frustrated = None
    if regime is Regime.FRUSTRATED:
        extended = counts
        while first_nonpositive_index(extended) is None:
            extended = solution_count_sequence(d, r, 2 * len(extended))
        first_frustrated = first_nonpositive_index(extended)

    return CountReport(
        d=d,
        r=r,
        d_sequence=counts,
        roots=characteristic_roots(d, r),
        theta=frustration_angle(d, r),
        regime=regime,
        first_frustrated_length=first_frustrated,
    )


def verify_dominated_sequence(s: Sequence[int], d: int, r: int) -> DominationResult:
    """
    Check s against s_1 <= d·s_0 and s_{n+1} <= d·s_n - r·s_{n-1} with every s_n >= 0.

    On success the slack u_n (the gap in each inequality) is returned and s_n <= D_n is
    asserted together with the inversion s_n = D_n - sum_l u_l·D_{n-l}. On failure the first
    violating index is returned.

    Raises:
        ValueError: If s is empty or s_0 != 1
        RuntimeError: If a valid sequence exceeds D_n (the domination lemma is broken)
    """
    _check_pair(d, r)
    if not s or s[0] != 1:
        raise ValueError("sequence must start with s_0 = 1")

    slack = []
    for n in range(1, len(s)):
        bound = d * s[n - 1] - (r * s[n - 2] if n >= 2 else 0)
        if s[n] < 0 or s[n] > bound:
            return DominationResult(ok=False, violation_index=n)
        slack.append(bound - s[n])

    counts = solution_count_sequence(d, r, max(len(s) - 1, 1))
    for n in range(1, len(s)):
        inverted = counts[n] - sum(slack[l - 1] * counts[n - l] for l in range(1, n + 1))
        if inverted != s[n] or s[n] > counts[n]:
            raise RuntimeError(f"domination lemma violated at n={n}: s_n={s[n]}, D_n={counts[n]}")
    return DominationResult(ok=True, slack=slack)


def sequence_from_slack(u: Sequence[int], d: int, r: int) -> list[int]:
    """s_0 = 1 and s_n = D_n - sum_{l=1}^{n} u_l·D_{n-l} for a slack sequence u_1..u_n."""
    counts = solution_count_sequence(d, r, max(len(u), 1))
    return [1] + [counts[n] - sum(u[l - 1] * counts[n - l] for l in range(1, n + 1)) for n in range(1, len(u) + 1)]


def power_solution_base(d: int, r: int) -> Optional[int]:
    """
    Smallest integer h with h² - d·h + r <= 0, so that s_n = h^n satisfies the recursion
    inequality; None when no such integer exists (frustrated regime or no integer in [g, f]).
    """
    _check_pair(d, r)
    for h in range(0, d + 1):
        if h * h - d * h + r <= 0:
            return h
    return None
