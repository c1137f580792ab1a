"""Regenerate the 64x64 grayscale test crops in tests/data from scikit-image's
bundled sample images."""

import os

import numpy as np
from skimage import color, data

from tvnlr.image_io import Image, save_image

OUT = os.path.join(os.path.dirname(__file__), os.pardir, "tests", "data")

# name -> (loader, row, col) of the top-left corner of the 64x64 crop
CROPS = {
    "camera": (data.camera, 96, 208),
    "astronaut": (lambda: color.rgb2gray(data.astronaut()), 48, 176),
    "coins": (data.coins, 32, 64),
    "chelsea": (lambda: color.rgb2gray(data.chelsea()), 96, 176),
}


def main():
    os.makedirs(OUT, exist_ok=True)
    for name, (load, r, c) in CROPS.items():
        arr = load()
        if arr.dtype != np.uint8:
            arr = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
        tile = arr[r:r + 64, c:c + 64].astype(np.float64) / 255.0
        save_image(Image.from_array(tile), os.path.join(OUT, f"{name}64.pgm"))
        print(name, tile.mean().round(3), tile.std().round(3))


if __name__ == "__main__":
    main()
