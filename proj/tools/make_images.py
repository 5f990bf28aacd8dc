#!/usr/bin/env python3
"""Export a handful of scikit-image sample pictures as 8-bit PGM fixtures.

The images are converted to grayscale and area-downsampled so that the
training and validation sets stay small enough to ship with the sources.
"""
import argparse
import pathlib

import numpy as np
import skimage.data as sd
from skimage.color import rgb2gray
from skimage.transform import resize

TRAIN = ["camera", "moon", "brick", "grass", "gravel", "clock", "astronaut",
         "rocket", "immunohistochemistry", "coins"]
VAL = ["coffee", "chelsea"]


def load(name):
    im = getattr(sd, name)()
    if im.ndim == 3:
        im = rgb2gray(im[..., :3])
    else:
        im = im.astype(np.float64) / 255.0
    return im


def write_pgm(path, im):
    h, w = im.shape
    pix = np.clip(np.round(im * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(pix.tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).parent.parent / "data"))
    ap.add_argument("--size", type=int, default=160)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    for subset, names in (("train", TRAIN), ("val", VAL)):
        (out / subset).mkdir(parents=True, exist_ok=True)
        for n in names:
            im = load(n)
            s = min(im.shape)
            im = im[(im.shape[0] - s) // 2:(im.shape[0] - s) // 2 + s,
                    (im.shape[1] - s) // 2:(im.shape[1] - s) // 2 + s]
            im = resize(im, (args.size, args.size), anti_aliasing=True)
            write_pgm(out / subset / f"{n}.pgm", im)


if __name__ == "__main__":
    main()
