import numpy as np
import pytest

from h2sim.errors import ConfigurationError
from h2sim.tensors import LayerKind, LayerSpec, LifParams, MaskKind, MaskTensor, NetworkSpec, SpikeTensor


def test_spike_pack_roundtrip(rng):
    bits = rng.random((2, 3, 5, 7)) < 0.4
    packed = SpikeTensor.pack(bits)
    assert np.array_equal(packed.unpack(), bits)
    assert packed.popcount() == int(bits.sum())
    assert packed.nbytes == -(-bits.size // 8)


def test_mask_tensor_keeps_kind():
    m = MaskTensor.pack(np.ones((2, 2), bool), MaskKind.POT_GRAD)
    assert m.kind is MaskKind.POT_GRAD
    assert m.popcount() == 4


@pytest.mark.parametrize("kwargs", [dict(alpha=0.0), dict(alpha=1.5), dict(th_l=1.0, th_r=1.0), dict(beta=0.0)])
def test_lif_params_rejects_bad_values(kwargs):
    with pytest.raises(ConfigurationError):
        LifParams(**kwargs)


def test_layer_spec_string_forms():
    assert str(LayerSpec(LayerKind.CONV, 64, 3, is_encoding=True)) == "64C3(Encoding)"
    assert str(LayerSpec(LayerKind.AVGPOOL, pool=2)) == "AP2"
    assert str(LayerSpec(LayerKind.FC, 10)) == "10FC"
    assert LayerSpec(LayerKind.CONV, 8, 5).padding == 2


def test_network_batch_size():
    net = NetworkSpec((1, 4, 4), 2, (LayerSpec(LayerKind.FC, 2),), sub_batch=4, batch_group=3)
    assert net.batch_size == 12
    assert net.describe() == "2FC"


def test_spike_pack_rejects_non_binary():
    with pytest.raises(ConfigurationError):
        SpikeTensor.pack(np.array([0, 2]))
