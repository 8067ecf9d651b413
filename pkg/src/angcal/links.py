"""Label-generation links: affine maps composed with a base squashing function.

A link turns the linear index w'x into a Bernoulli success probability.
Three families are supported, each parametrized by slope `a` and
intercept `b` applied to the input before squashing:

    sigmoid : u -> 1 / (1 + exp(-(a*u + b)))
    probit  : u -> Phi(a*u + b), Phi the standard normal CDF
    crelu   : u -> min(1, max(0, a*u + b))

`a = 0` yields a constant link; it is allowed here (degenerate cases are
useful for tests and null experiments) and rejected only by operations
that genuinely divide by `a`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from .errors import ContractError

LINK_KINDS = ("sigmoid", "probit", "crelu")

#: Slope of the probit that best matches the standard sigmoid,
#: sigmoid(x) ~= Phi(sqrt(pi/8) * x). Used to translate sigmoid-family
#: experiments into the probit parametrization.
SIGMOID_PROBIT_BRIDGE = math.sqrt(math.pi / 8.0)


@dataclass(frozen=True)
class LinkFunction:
    """An affine-then-squash link; immutable and vectorized over inputs."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ContractError(f"unknown link kind {self.kind!r}; expected one of {LINK_KINDS}")
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ContractError("link parameters must be finite")

    def __call__(self, u):
        t = self.a * np.asarray(u, dtype=np.float64) + self.b
        if self.kind == "sigmoid":
            return expit(t)
        if self.kind == "probit":
            return ndtr(t)
        return np.clip(t, 0.0, 1.0)

    @property
    def smooth(self) -> bool:
        """Whether the link is everywhere differentiable (crelu has kinks)."""
        return self.kind != "crelu"

    def label(self) -> str:
        return f"{self.kind}({self.a:g}u{self.b:+g})"

    @classmethod
    def sigmoid_affine(cls, a: float, b: float) -> "LinkFunction":
        return cls("sigmoid", float(a), float(b))

    @classmethod
    def probit_affine(cls, a: float, b: float) -> "LinkFunction":
        return cls("probit", float(a), float(b))

    @classmethod
    def clipped_relu_affine(cls, a: float, b: float) -> "LinkFunction":
        return cls("crelu", float(a), float(b))

    @classmethod
    def parse(cls, text: str) -> "LinkFunction":
        """Parse 'kind:a:b' (e.g. 'sigmoid:3:1', 'crelu:3:0.5').

        Omitted parameters default to the values used throughout the
        bundled experiments: sigmoid/probit a=3, b=1; crelu a=3, b=0.5.
        """
        parts = text.split(":")
        kind = parts[0].strip().lower()
        if kind not in LINK_KINDS:
            raise ContractError(f"cannot parse link {text!r}")
        defaults = {"sigmoid": (3.0, 1.0), "probit": (3.0, 1.0), "crelu": (3.0, 0.5)}
        a, b = defaults[kind]
        try:
            if len(parts) > 1 and parts[1]:
                a = float(parts[1])
            if len(parts) > 2 and parts[2]:
                b = float(parts[2])
        except ValueError as exc:
            raise ContractError(f"cannot parse link parameters in {text!r}") from exc
        if len(parts) > 3:
            raise ContractError(f"cannot parse link {text!r}")
        return cls(kind, a, b)
