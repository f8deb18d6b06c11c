import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from PIL import Image

from sunif import io as sio
from sunif.forward import ImageStack


f32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6), elements=f32),
       st.floats(-1e4, 1e4), st.floats(0.01, 100))
def test_stack_round_trip_bit_exact(frames, start, step):
    stack = ImageStack(frames, start + step * np.arange(frames.shape[0]))
    back = sio.decode_stack(sio.encode_stack(stack))
    assert back.frames.dtype == np.float32
    assert back.frames.tobytes() == frames.tobytes()
    assert np.allclose(back.positions, stack.positions, rtol=1e-12, atol=1e-9)
    assert sio.encode_stack(back) == sio.encode_stack(stack)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=8),
                  elements=st.floats(width=32, allow_infinity=False)))
def test_raster_round_trip_bit_exact(values):
    back = sio.decode_raster(sio.encode_raster(values))
    assert back.tobytes() == values.tobytes()


def test_stack_header_layout():
    stack = ImageStack(np.arange(24, dtype=np.float32).reshape(2, 3, 4), [10.0, 15.0])
    data = sio.encode_stack(stack)
    assert data[:6] == b"SUNIF1"
    assert struct.unpack_from("<3I2d", data, 6) == (4, 3, 2, 10.0, 5.0)
    assert data[34:38] == b"f32\0"
    assert len(data) == 38 + 24 * 4
    assert np.frombuffer(data[38:42], "<f4")[0] == 0.0 and np.frombuffer(data[42:46], "<f4")[0] == 1.0


def test_raster_header_layout():
    data = sio.encode_raster(np.array([[1.0, np.nan, 3.0]], dtype=np.float32))
    assert data[:6] == b"SUNDM1" and struct.unpack_from("<2I", data, 6) == (3, 1)
    assert np.isnan(sio.decode_raster(data)[0, 1])


def test_truncated_stack_rejected():
    data = sio.encode_stack(ImageStack(np.ones((3, 2, 2), np.float32), [0.0, 1.0, 2.0]))
    for cut in (10, len(data) - 1):
        with pytest.raises(sio.FormatError):
            sio.decode_stack(data[:cut])
    with pytest.raises(sio.FormatError):
        sio.decode_stack(data + b"\0")


def test_bad_magic_and_encoding():
    data = bytearray(sio.encode_stack(ImageStack(np.ones((1, 1, 1), np.float32), [0.0])))
    with pytest.raises(sio.FormatError):
        sio.decode_stack(b"XUNIF1" + bytes(data[6:]))
    data[34:38] = b"u16\0"
    with pytest.raises(sio.FormatError):
        sio.decode_stack(bytes(data))
    with pytest.raises(sio.FormatError):
        sio.decode_raster(b"SUNDM2" + bytes(8))


def test_nonuniform_positions_rejected():
    with pytest.raises(ValueError):
        sio.encode_stack(ImageStack(np.ones((3, 1, 1)), [0.0, 1.0, 3.0]))


def test_file_round_trip(tmp_path):
    stack = ImageStack(np.random.default_rng(0).uniform(size=(4, 3, 5)).astype(np.float32), [1.0, 2.0, 3.0, 4.0])
    sio.write_stack(tmp_path / "s.sif", stack)
    assert sio.read_stack(tmp_path / "s.sif").frames.tobytes() == stack.frames.tobytes()
    assert [p.name for p in tmp_path.iterdir()] == ["s.sif"]


def test_report_round_trip():
    text = sio.format_report({"a": 1, "b": 0.1, "c": True, "d": "x y"})
    assert text == "a=1\nb=0.1\nc=true\nd=x y\n"
    assert sio.parse_report(text) == {"a": "1", "b": "0.1", "c": "true", "d": "x y"}
    with pytest.raises(ValueError):
        sio.format_report({"a=b": 1})
    with pytest.raises(sio.FormatError):
        sio.parse_report("novalue\n")


def test_scene_config():
    scene = sio.scene_from_config({"kind": "step", "width": 10, "height": 6, "params": {"step_height": 20},
                                   "kernel": {"offsets": [[0, 2]], "weights": [0.2]}}, seed=4)
    assert scene.shape == (6, 10)
    assert np.ptp(scene.layers[0].depth) == 20
    assert scene.kernel.extra_path.tolist() == [0.0]
    for bad in ({"kind": "flat", "colour": 1}, {"width": 3}, {"kind": "flat", "kernel": {"radius": 2}},
                {"kind": "flat", "params": {"gap": 1}}, {"kind": "flat", "params": [1]}):
        with pytest.raises(ValueError):
            sio.scene_from_config(bad)


def test_scene_seed_override():
    a = sio.scene_from_config({"kind": "flat", "width": 4, "height": 4}, seed=1)
    b = sio.scene_from_config({"kind": "flat", "width": 4, "height": 4, "seed": 1}, seed=9)
    assert np.array_equal(a.layers[0].microphase, b.layers[0].microphase)


def test_png16_and_preview(tmp_path):
    values = np.linspace(0, 1, 12).reshape(3, 4)
    sio.save_png16(tmp_path / "a.png", values)
    with Image.open(tmp_path / "a.png") as im:
        arr = np.asarray(im)
    assert arr.min() == 0 and arr.max() == 65535 and arr.shape == (3, 4)
    raster = values.copy()
    raster[0, 0] = np.nan
    sio.save_preview(tmp_path / "p.png", raster)
    with Image.open(tmp_path / "p.png") as im:
        rgb = np.asarray(im)
    assert rgb.shape == (3, 4, 3) and rgb[0, 0].tolist() == [0, 0, 0]


def test_load_image_formats(tmp_path):
    img = np.random.default_rng(1).uniform(size=(5, 6))
    np.save(tmp_path / "a.npy", img)
    assert np.array_equal(sio.load_image(tmp_path / "a.npy"), img)
    sio.write_raster(tmp_path / "a.sdm", img)
    assert np.allclose(sio.load_image(tmp_path / "a.sdm"), img.astype(np.float32))
    Image.fromarray((img * 255).astype(np.uint8)).convert("RGB").save(tmp_path / "a.png")
    assert sio.load_image(tmp_path / "a.png").shape == (5, 6)
    (tmp_path / "bad.png").write_bytes(b"junk")
    with pytest.raises(sio.FormatError):
        sio.load_image(tmp_path / "bad.png")
    np.save(tmp_path / "b.npy", np.zeros(4))
    with pytest.raises(sio.FormatError):
        sio.load_image(tmp_path / "b.npy")
