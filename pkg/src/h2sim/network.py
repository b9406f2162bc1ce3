"""Network strings such as ``64C3(Encoding)-128C3-AP2-256C3S2-10FC``.

Grammar::

    netspec := layer ("-" layer)*
    layer   := INT "C" INT ["S" INT] ["(Encoding)"] | "AP" INT | INT "FC"
"""

from __future__ import annotations

from typing import List, Tuple

from .errors import NetworkParseError
from .tensors import LayerKind, LayerSpec, LifParams, NetworkSpec

ENCODING = "(Encoding)"


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self, s: str) -> bool:
        return self.text.startswith(s, self.pos)

    def take(self, s: str) -> bool:
        if self.peek(s):
            self.pos += len(s)
            return True
        return False

    def integer(self, what: str) -> int:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if start == self.pos:
            raise NetworkParseError(f"expected {what}", start)
        value = int(self.text[start:self.pos])
        if value < 1:
            raise NetworkParseError(f"{what} must be positive", start)
        return value

    def done(self) -> bool:
        return self.pos >= len(self.text)


def _layer(sc: _Scanner) -> LayerSpec:
    start = sc.pos
    if sc.take("AP"):
        return LayerSpec(LayerKind.AVGPOOL, pool=sc.integer("pool size"))
    channels = sc.integer("channel count or 'AP'")
    if sc.take("FC"):
        return LayerSpec(LayerKind.FC, channels)
    if not sc.take("C"):
        raise NetworkParseError("expected 'C' or 'FC' after channel count", sc.pos)
    kernel = sc.integer("kernel size")
    stride = sc.integer("stride") if sc.take("S") else 1
    encoding = sc.take(ENCODING)
    if not sc.done() and not sc.peek("-"):
        raise NetworkParseError(f"unexpected {sc.text[sc.pos]!r} in layer starting at {start}", sc.pos)
    return LayerSpec(LayerKind.CONV, channels, kernel, stride, is_encoding=encoding)


def parse_layers(spec: str) -> Tuple[LayerSpec, ...]:
    if not isinstance(spec, str) or not spec:
        raise NetworkParseError("empty network string", 0)
    sc = _Scanner(spec)
    layers: List[LayerSpec] = []
    while True:
        layer_start = sc.pos
        layer = _layer(sc)
        if layer.is_encoding and layers:
            raise NetworkParseError("only the first layer can be an encoding layer", layer_start)
        layers.append(layer)
        if sc.done():
            break
        if not sc.take("-"):
            raise NetworkParseError(f"expected '-' between layers, got {sc.text[sc.pos]!r}", sc.pos)
        if sc.done():
            raise NetworkParseError("trailing '-'", sc.pos)
    return tuple(layers)


def parse_network(spec: str, input_shape=(3, 32, 32), timesteps: int = 10, lif: LifParams = None,
                  sub_batch: int = 4, batch_group: int = 1) -> NetworkSpec:
    layers = parse_layers(spec)
    return NetworkSpec(tuple(input_shape), timesteps, layers, lif or LifParams(), sub_batch, batch_group)
