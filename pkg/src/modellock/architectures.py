"""Reference CNN configurations with pinned parameter counts.

The published table for this scheme's evaluation lists layer sequences and
total trainable-parameter counts but not kernel sizes or channel widths.
These configurations are chosen so the totals come out exactly:

    mnist          C-MP-C-MP-FC-FC        86,166 parameters
    fashion-mnist  C-MP-C-MP-FC-FC       180,438 parameters
    cifar10        C-C-MP-C-C-MP-FC-FC  1,250,858 parameters

The counts are asserted every time an architecture is built. Print a
descriptor with ``python -m modellock.architectures mnist``.
"""

from __future__ import annotations

import sys

from .nn import Architecture, parse_architecture

MNIST = """\
input 1x28x28
conv 13 3x3 stride 1 pad valid relu
maxpool 2x2 stride 2
conv 18 3x3 stride 1 pad valid relu
maxpool 2x2 stride 2
flatten
dense 182 relu
dense 10 linear
"""

FASHION_MNIST = """\
input 1x28x28
conv 21 3x3 stride 1 pad valid relu
maxpool 2x2 stride 2
conv 75 3x3 stride 1 pad valid relu
maxpool 2x2 stride 2
flatten
dense 88 relu
dense 10 linear
"""

CIFAR10 = """\
input 3x32x32
conv 32 3x3 stride 1 pad same relu
conv 64 3x3 stride 1 pad same relu
maxpool 2x2 stride 2
conv 96 3x3 stride 1 pad same relu
conv 48 3x3 stride 1 pad same relu
maxpool 2x2 stride 2
flatten
dense 368 relu
dense 10 linear
"""

REFERENCE = {
    "mnist": (MNIST, 86_166),
    "fashion-mnist": (FASHION_MNIST, 180_438),
    "cifar10": (CIFAR10, 1_250_858),
}


def reference_arch(name: str) -> Architecture:
    """Build a named reference architecture, asserting its parameter count."""
    try:
        text, expected = REFERENCE[name]
    except KeyError:
        raise KeyError(f"unknown architecture {name!r}, expected one of {sorted(REFERENCE)}")
    arch = parse_architecture(text)
    assert arch.param_count == expected, (name, arch.param_count, expected)
    return arch


def mnist_arch() -> Architecture:
    return reference_arch("mnist")


def fashion_mnist_arch() -> Architecture:
    return reference_arch("fashion-mnist")


def cifar10_arch() -> Architecture:
    return reference_arch("cifar10")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1 or argv[0] not in REFERENCE:
        print(f"usage: python -m modellock.architectures {{{','.join(sorted(REFERENCE))}}}",
              file=sys.stderr)
        return 2
    reference_arch(argv[0])  # assert the count before emitting
    print(REFERENCE[argv[0]][0], end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
