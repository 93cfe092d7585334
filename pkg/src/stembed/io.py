"""Readers and writers for the on-disk formats used across the package.

* raw tensor dumps: ASCII header ``STE <ndim> <d0> <d1> ...`` followed by
  little-endian float32 values in row-major order
* PFM depth maps (little-endian, scale -1.0)
* binary PPM (P6) RGB images and PGM (P5) grey or 16-bit id maps
"""

import os

import numpy as np

KITTI_CLASS_CAR = 1
_ID_DIVISOR = 1000


def _read_token(f):
    """Read one whitespace-delimited ASCII token from a netpbm header."""
    token = b""
    while True:
        c = f.read(1)
        if not c:
            break
        if c == b"#" and not token:
            f.readline()
            continue
        if c.isspace():
            if token:
                break
            continue
        token += c
    if not token:
        raise ValueError("unexpected end of header")
    return token.decode("ascii")


# -- tensor dump ----------------------------------------------------------------

def write_tensor(path, arr):
    arr = np.asarray(arr)
    header = "STE %d %s\n" % (arr.ndim, " ".join(str(d) for d in arr.shape))
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(path):
    """Read a tensor dump. Returns a float32 array."""
    with open(path, "rb") as f:
        fields = f.readline().decode("ascii").split()
        if not fields or fields[0] != "STE":
            raise ValueError(f"{path}: not a tensor dump (missing STE header)")
        ndim = int(fields[1])
        shape = tuple(int(d) for d in fields[2:])
        if len(shape) != ndim or any(d <= 0 for d in shape):
            raise ValueError(f"{path}: malformed STE header")
        count = int(np.prod(shape))
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != count:
        raise ValueError(f"{path}: expected {count} values, found {data.size}")
    return data.reshape(shape).astype(np.float32)


# -- PFM ----------------------------------------------------------------------

def write_pfm(path, img, scale=-1.0):
    """Write a PFM file. Negative ``scale`` marks little-endian data."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError("PFM holds H x W or H x W x 3 data")
    height, width = img.shape[:2]
    dtype = "<f4" if scale < 0 else ">f4"
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(b"%d %d\n" % (width, height))
        f.write(b"%f\n" % scale)
        # rows are stored bottom to top
        f.write(np.ascontiguousarray(np.flipud(img), dtype=dtype).tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag == b"Pf":
            channels = 1
        elif tag == b"PF":
            channels = 3
        else:
            raise ValueError(f"{path}: not a PFM file")
        width, height = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(width * height * channels * 4), dtype=dtype)
    if data.size != width * height * channels:
        raise ValueError(f"{path}: truncated PFM data")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(data.reshape(shape)).astype(np.float32)


# -- PGM / PPM -------------------------------------------------------------------

def _write_netpbm(path, magic, arr, maxval):
    height, width = arr.shape[:2]
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as f:
        f.write(b"%s\n%d %d\n%d\n" % (magic, width, height, maxval))
        f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_netpbm(path, expected_magic):
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic != expected_magic:
            raise ValueError(f"{path}: expected {expected_magic.decode()} file, found {magic!r}")
        width = int(_read_token(f))
        height = int(_read_token(f))
        maxval = int(_read_token(f))
        if not 0 < maxval < 65536:
            raise ValueError(f"{path}: invalid maxval {maxval}")
        channels = 3 if magic == b"P6" else 1
        dtype = ">u2" if maxval > 255 else "u1"
        count = width * height * channels
        data = np.frombuffer(f.read(count * np.dtype(dtype).itemsize), dtype=dtype)
    if data.size != count:
        raise ValueError(f"{path}: truncated image data")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return data.reshape(shape), maxval


def write_pgm(path, img, maxval=None):
    """Write a P5 image. ``maxval`` defaults to 255 or 65535 by value range."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM holds a single channel")
    if maxval is None:
        maxval = 255 if img.max(initial=0) <= 255 else 65535
    if img.min(initial=0) < 0 or img.max(initial=0) > maxval:
        raise ValueError("PGM values out of range")
    _write_netpbm(path, b"P5", img, maxval)


def read_pgm(path):
    img, _ = _read_netpbm(path, b"P5")
    return img.astype(np.int64)


def write_ppm(path, rgb):
    """Write an 8-bit P6 image from floats in [0, 1] or uint8 data."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM holds H x W x 3 data")
    if rgb.dtype != np.uint8:
        rgb = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    _write_netpbm(path, b"P6", rgb, 255)


def read_ppm(path):
    """Read a P6 image as floats in [0, 1]."""
    img, maxval = _read_netpbm(path, b"P6")
    return img.astype(np.float64) / maxval


# -- KITTI MOTS id maps ----------------------------------------------------------

def encode_id_map(labels, class_id=KITTI_CLASS_CAR):
    """Instance labels (0 = background) to ``class_id * 1000 + instance_id``."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= _ID_DIVISOR:
        raise ValueError("instance ids must lie in [0, 999]")
    return np.where(labels > 0, class_id * _ID_DIVISOR + labels, 0)


def decode_id_map(values):
    """Inverse of :func:`encode_id_map`; class information is dropped.

    The KITTI ignore value 10000 maps to background.
    """
    values = np.asarray(values, dtype=np.int64)
    ids = np.where(values > 0, values % _ID_DIVISOR, 0)
    ids[values == 10000] = 0
    return ids


def write_id_map(path, labels, class_id=KITTI_CLASS_CAR):
    write_pgm(path, encode_id_map(labels, class_id), maxval=65535)


def read_id_map(path):
    return decode_id_map(read_pgm(path))


def sorted_frames(directory, suffix):
    """Frame files in ``directory`` with the given suffix, in name order."""
    names = sorted(n for n in os.listdir(directory) if n.endswith(suffix))
    return [os.path.join(directory, n) for n in names]
