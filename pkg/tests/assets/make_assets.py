"""Regenerate the committed test assets.

Run from the repository root after an intentional change to the forward
pipeline, then review the snapshot statistics it prints before committing:

    python tests/assets/make_assets.py
"""

from pathlib import Path

import numpy as np

from descan import Image, ScanParams, save_image, simulate

HERE = Path(__file__).parent


def make_pattern() -> Image:
    """A 96x96 color pattern: grid lines, a disk, and a gradient band."""
    n = 96
    yy, xx = np.mgrid[0:n, 0:n].astype(float)
    px = np.full((n, n, 3), 0.92)
    px[(yy.astype(int) % 12 == 0) | (xx.astype(int) % 12 == 0)] = 0.15
    disk = (yy - 34) ** 2 + (xx - 60) ** 2 <= 14**2
    px[disk] = [0.75, 0.25, 0.2]
    band = np.abs((xx + yy) - 120) <= 6
    px[band] = np.stack([0.2 + 0.6 * xx[band] / n] * 3, axis=-1)
    return Image(np.clip(px, 0.0, 1.0))


def make_book_page() -> Image:
    """A 120x320 page: white margins around dark text-like dashes."""
    h, w = 120, 320
    px = np.full((h, w), 1.0)
    rng = np.random.default_rng(2024)
    for row in range(28, 96, 10):
        col = 12
        while col < w - 16:
            length = int(rng.integers(8, 26))
            px[row : row + 4, col : col + length] = 0.12
            col += length + int(rng.integers(4, 10))
    return Image(px)


def main() -> None:
    pattern = make_pattern()
    save_image(pattern, HERE / "pattern.ppm")
    # quantize before simulating so the golden matches the CLI, which
    # reads the byte file back
    pattern = Image.from_bytes(pattern.to_bytes())

    params = ScanParams(
        l=24.0,
        theta0=0.7853981633974483,
        sigma_slope=0.06,
        d=96.0,
        alpha=2,
        s_max=(96 - 1) / 24.0,
    )
    (HERE / "fig_params.json").write_text(params.to_json())
    scan = simulate(pattern, params)
    save_image(scan, HERE / "golden_simulate.ppm")
    print(
        "golden_simulate: mean %.4f (pattern %.4f), col0/col-1 means %.4f/%.4f"
        % (
            scan.pixels.mean(),
            pattern.pixels.mean(),
            scan.pixels[:, 0].mean(),
            scan.pixels[:, -1].mean(),
        )
    )

    page = make_book_page()
    save_image(page, HERE / "book_page.pgm")
    page = Image.from_bytes(page.to_bytes())
    book_params = ScanParams(
        l=66.0,
        theta0=0.63,
        sigma_slope=0.03,
        d=260.0,
        alpha=2,
        s_max=(320 - 1) / 66.0,
    )
    (HERE / "book_params.json").write_text(book_params.to_json())
    scan = simulate(page, book_params)
    save_image(scan, HERE / "book_scan.pgm")
    print(
        "book_scan: margin-near-spine mean %.4f (page margin 1.0)"
        % scan.pixels[:16, :80].mean()
    )


if __name__ == "__main__":
    main()
