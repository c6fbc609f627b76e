import json

import numpy as np
import pytest

import halfstrip as hs
from halfstrip import GammaTooSmallError, ModelFormatError

from conftest import retrial_model, scalar_chain


def test_retrial_uniformized_blocks_gamma_one():
    """Frozen transition blocks of the single-server retrial model at rate
    scale 1: arrival 0.2, service 0.5, retry 0.3."""
    m = retrial_model(0.2, 0.5, 1, gamma=1.0)
    assert m.d == 2
    assert m.n_prefix == 0
    assert np.allclose(m.tail.up, [[0.0, 0.0], [0.0, 0.2]], atol=1e-14)
    assert np.allclose(m.tail.down, [[0.0, 0.3], [0.0, 0.0]], atol=1e-14)
    assert np.allclose(m.tail.stay, [[0.5, 0.2], [0.5, 0.3]], atol=1e-14)
    assert np.allclose(m.r0, [[0.8, 0.2], [0.5, 0.3]], atol=1e-14)
    assert np.allclose(m.p0, [[0.0, 0.0], [0.0, 0.2]], atol=1e-14)


def test_retrial_rows_sum_to_one():
    m = retrial_model(0.1, 0.3, 2)
    full = m.tail.up + m.tail.down + m.tail.stay
    assert np.allclose(full.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose((m.r0 + m.p0).sum(axis=1), 1.0, atol=1e-12)


def test_gamma_too_small_rejected():
    gen = hs.build_retrial(0.2, 0.5, 1, hs.RetrySchedule.parse("0.3"))
    with pytest.raises(GammaTooSmallError):
        hs.uniformize(gen, gamma=0.1)


def test_default_gamma_covers_all_levels():
    gen = hs.build_retrial(0.2, 0.5, 1, hs.RetrySchedule.parse("0.3+0.3/n"))
    gamma = hs.default_gamma(gen)
    m = hs.uniformize(gen)  # must not raise
    assert gamma > 0
    assert np.all(m.tail.stay.diagonal() >= -1e-12)


def test_validate_accepts_warnings_on_retrial(retrial_c1):
    rep = hs.validate(retrial_c1)
    assert rep.ok
    # structurally zero columns in up/down are advisory only
    assert all(p.severity == "warning" for p in rep.problems)


def test_validate_flags_bad_row_sum():
    m = scalar_chain(0.3, 0.7)
    bad = hs.QbdModel(
        d=1,
        r0=m.r0,
        p0=np.array([[0.8]]),  # boundary row sums to 0.8
        prefix=(),
        tail=m.tail,
    )
    rep = hs.validate(bad)
    assert not rep.ok
    assert any(p.severity == "error" for p in rep.problems)


def test_validate_flags_negative_entry():
    tail = hs.BlockTriple(
        up=np.array([[0.5]]), down=np.array([[0.6]]), stay=np.array([[-0.1]])
    )
    bad = hs.QbdModel(
        d=1, r0=np.array([[0.0]]), p0=np.array([[1.0]]), prefix=(), tail=tail
    )
    assert not hs.validate(bad).ok


def test_shape_mismatch_rejected_at_construction():
    tail = hs.BlockTriple(
        up=np.zeros((2, 2)), down=np.zeros((2, 2)), stay=np.eye(2)
    )
    with pytest.raises(ModelFormatError):
        hs.QbdModel(
            d=2, r0=np.zeros((1, 1)), p0=np.ones((1, 1)), prefix=(), tail=tail
        )


def test_block_at_prefix_then_tail():
    m = retrial_model(0.2, 0.5, 1, theta="0.3+0.3/n")
    n = m.n_prefix
    assert n > 0
    inside = m.block_at(1)
    tail_a = m.block_at(n + 1)
    tail_b = m.block_at(n + 50)
    assert np.allclose(tail_a.up, tail_b.up)
    assert np.allclose(tail_a.down, tail_b.down)
    # level 1 retry rate differs from the limit, so the blocks must differ
    assert not np.allclose(inside.down, tail_a.down)


def test_dict_roundtrip(retrial_c2):
    payload = hs.model_to_dict(retrial_c2)
    again = hs.model_from_dict(payload)
    assert again.d == retrial_c2.d
    assert len(again.prefix) == len(retrial_c2.prefix)
    assert np.allclose(again.r0, retrial_c2.r0)
    assert np.allclose(again.tail.stay, retrial_c2.tail.stay)
    # must survive a JSON round trip byte-for-byte in value terms
    again2 = hs.model_from_dict(json.loads(json.dumps(payload)))
    assert np.allclose(again2.tail.up, retrial_c2.tail.up)


def test_save_load_roundtrip(tmp_path, d1_pos):
    path = tmp_path / "model.json"
    hs.save_model(d1_pos, str(path))
    again = hs.load_model(str(path))
    assert again.d == 1
    assert np.allclose(again.tail.down, [[0.7]])


def test_model_from_dict_rejects_garbage():
    with pytest.raises(ModelFormatError):
        hs.model_from_dict({"d": 1})
    with pytest.raises(ModelFormatError):
        hs.model_from_dict({"d": 1, "r0": [[0]], "p0": [[1]], "tail": {}})


def test_retry_schedule_constant():
    sch = hs.RetrySchedule.parse("0.3")
    assert sch.kind == "constant"
    assert sch.rate(1) == pytest.approx(0.3)
    assert sch.rate(1000) == pytest.approx(0.3)
    assert sch.limit == pytest.approx(0.3)
    assert sch.default_prefix() == 0


def test_retry_schedule_affine():
    sch = hs.RetrySchedule.parse("0.3+0.3/n")
    assert sch.kind == "affine"
    assert sch.rate(1) == pytest.approx(0.6)
    assert sch.rate(3) == pytest.approx(0.4)
    assert sch.limit == pytest.approx(0.3)
    assert sch.default_prefix() == 512


def test_retry_schedule_table_file(tmp_path):
    path = tmp_path / "rates.json"
    path.write_text(json.dumps([0.5, 0.4, 0.3]))
    sch = hs.RetrySchedule.parse(str(path))
    assert sch.kind == "table"
    assert sch.rate(2) == pytest.approx(0.4)
    assert sch.rate(99) == pytest.approx(0.3)
    assert sch.limit == pytest.approx(0.3)
    assert sch.default_prefix() == 3


def test_retry_schedule_bad_spec():
    with pytest.raises(ModelFormatError):
        hs.RetrySchedule.parse("not-a-rate-or-file")


def test_callback_model_levels():
    def level_fn(n):
        return hs.BlockTriple(
            up=np.array([[0.3]]),
            down=np.array([[0.7]]),
            stay=np.array([[0.0]]),
        )

    m = hs.CallbackModel(
        d=1, r0=np.array([[0.0]]), p0=np.array([[1.0]]), level_fn=level_fn
    )
    blk = m.block_at(5)
    assert np.allclose(blk.down, [[0.7]])
    assert not hasattr(m, "tail")


def test_as_chain_on_generator_and_chain(d1_pos):
    gen = hs.build_retrial(0.2, 0.5, 1, hs.RetrySchedule.parse("0.3"))
    from_gen = hs.as_chain(gen, gamma=1.0)
    assert isinstance(from_gen, hs.QbdModel)
    assert hs.as_chain(d1_pos) is d1_pos
