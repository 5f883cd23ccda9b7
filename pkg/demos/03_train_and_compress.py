"""Train a small variable-rate codec and use it on a real bitstream.

A few hundred iterations on synthetic images are enough to get a working
(if rough) codec; every tradeoff in the set then produces a decodable
.mae file from the same shared model.

Run:  python demos/03_train_and_compress.py   (about 1-2 minutes on CPU)
"""

import tempfile
from pathlib import Path

from maecodec.codec import LoadedCodec, compress_image, decompress_image
from maecodec.image_io import write_ppm
from maecodec.metrics import psnr
from maecodec.synthetic import make_corpus, make_image
from maecodec.training import TrainingConfig, train

config = TrainingConfig(
    mode="mae", channels=24, crop_size=48, batch_size=8,
    lambdas=(64.0, 512.0, 4096.0),
    total_iters=800, halve_at=600, seed=0)

print(f"training a {config.channels}-channel modulated codec "
      f"for {config.total_iters} iterations...")
series = train(config, make_corpus(12, 128, 128))
checkpoint = series[-1][1]
print(f"done; checkpoint hash {checkpoint.model_hash:016x}")

codec = LoadedCodec(checkpoint)
image = make_image(777, 192, 192)

workdir = Path(tempfile.mkdtemp(prefix="maecodec_demo_"))
print(f"\ncompressing one 192x192 image at every tradeoff -> {workdir}")
print(f"{'lambda':>8} {'bytes':>7} {'bpp':>7} {'psnr':>7}")
for idx, lam in enumerate(config.lambdas):
    data = compress_image(codec, image, idx)
    recon = decompress_image(codec, data)
    (workdir / f"lam{lam:g}.mae").write_bytes(data)
    write_ppm(workdir / f"lam{lam:g}_recon.ppm", recon)
    bpp = len(data) * 8 / (192 * 192)
    print(f"{lam:8g} {len(data):7d} {bpp:7.4f} {psnr(image, recon):7.2f}")

print("\nsame shared model, one byte in the header selects the tradeoff")
