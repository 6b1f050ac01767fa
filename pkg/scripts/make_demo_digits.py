"""Build a deterministic two-view digits corpus for demos and tests.

Layout mirrors the classic multi-feature digits benchmarks: 2000 samples,
200 per class ordered by class, one 76-d Fourier-magnitude view and one
64-d Karhunen-Loeve (PCA) view, plus labels, a manifest, and ready-made
config files for the command line walkthrough.

Source images are the 8x8 handwritten digits bundled with scikit-learn
(1797 of them); each class is topped up to 200 samples with seeded pixel
jitter on recycled images.  Everything is seeded and the CSV float
formatting is repr-exact, so repeated runs produce identical bytes.
"""

import argparse
from pathlib import Path

import numpy as np
from scipy.ndimage import zoom
from sklearn.datasets import load_digits

PER_CLASS = 200
FOU_DIM = 76
KAR_DIM = 64
UPSCALE = 2  # 8x8 -> 16x16 before the FFT


def balanced_images(seed: int) -> tuple[np.ndarray, np.ndarray]:
    """2000 8x8 images, 200 per class, ordered by class."""
    bunch = load_digits()
    images = bunch.data.astype(np.float64)  # (1797, 64), values 0..16
    labels = bunch.target
    rng = np.random.default_rng(seed)
    out = []
    for cls in range(10):
        rows = images[labels == cls]
        take = [rows[i % len(rows)] for i in range(PER_CLASS)]
        block = np.stack(take)
        if PER_CLASS > len(rows):
            # jitter the recycled rows so no two samples are identical
            extra = slice(len(rows), PER_CLASS)
            noise = rng.normal(0.0, 0.4, size=block[extra].shape)
            block[extra] = np.clip(block[extra] + noise, 0.0, 16.0)
        out.append(block)
    data = np.concatenate(out)
    labels = np.repeat(np.arange(10), PER_CLASS)
    return data, labels


def fourier_view(flat_images: np.ndarray) -> np.ndarray:
    """Magnitudes of the 76 lowest-frequency 2-D Fourier coefficients."""
    n = flat_images.shape[0]
    side = 8 * UPSCALE
    # deterministic low-frequency ordering over the rfft2 half-plane
    fy = np.arange(side)
    fy_eff = np.minimum(fy, side - fy)
    fx = np.arange(side // 2 + 1)
    key = fy_eff[:, None] ** 2 + fx[None, :] ** 2
    order = np.lexsort((np.tile(fx, side), np.repeat(fy, side // 2 + 1), key.ravel()))
    pick = order[:FOU_DIM]
    feats = np.empty((n, FOU_DIM))
    for i in range(n):
        img = zoom(flat_images[i].reshape(8, 8), UPSCALE, order=1)
        mag = np.abs(np.fft.rfft2(img))
        feats[i] = mag.ravel()[pick]
    return feats


def kl_view(flat_images: np.ndarray) -> np.ndarray:
    """All 64 principal-component scores of the raw pixels."""
    centered = flat_images - flat_images.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    # fix each component's sign so the output does not depend on LAPACK whims
    flip = np.sign(vt[np.arange(vt.shape[0]), np.abs(vt).argmax(axis=1)])
    flip[flip == 0] = 1.0
    vt = vt * flip[:, None]
    return centered @ vt.T[:, :KAR_DIM]


def balance_scale(view: np.ndarray) -> np.ndarray:
    """Divide a view by its mean column standard deviation.

    The raw Fourier magnitudes sit two orders of magnitude above the
    KL scores; one scalar per view puts both on comparable footing,
    like the bounded feature ranges of the classic benchmark files.
    """
    return view / view.std(axis=0).mean()


def write_csv(path: Path, mat: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in mat:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


MANIFEST = """\
name = digits2k
modality.1.path = fou.csv
modality.1.dim = 76
modality.2.path = kar.csv
modality.2.dim = 64
labels.path = labels.csv
split.train = 1500
split.seed = 7
"""

TRAIN_CFG = """\
data.manifest = manifest.txt
model.variant = {variant}
model.bits = 64
train.neighbors = 50
train.anchors = 150
train.seed = 7
out.dir = runs
"""

SWEEP_CFG = """\
data.manifest = manifest.txt
model.variant = lle
model.bits = 64
train.seed = 7
sweep.lambda1 = 0.01,1,100
sweep.rho = 0.01,1,100
sweep.neighbors = 50,150
out.dir = runs
"""


def build(out_dir, seed: int = 7) -> dict:
    """Generate the corpus; returns the paths of everything written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images, labels = balanced_images(seed)
    paths = {
        "fou": out / "fou.csv",
        "kar": out / "kar.csv",
        "labels": out / "labels.csv",
        "manifest": out / "manifest.txt",
        "train_lle": out / "train_lle.cfg",
        "train_lpp": out / "train_lpp.cfg",
        "sweep": out / "sweep.cfg",
    }
    write_csv(paths["fou"], balance_scale(fourier_view(images)))
    write_csv(paths["kar"], balance_scale(kl_view(images)))
    paths["labels"].write_text("".join(f"{v}\n" for v in labels), encoding="utf-8")
    paths["manifest"].write_text(MANIFEST, encoding="utf-8")
    paths["train_lle"].write_text(TRAIN_CFG.format(variant="lle"), encoding="utf-8")
    paths["train_lpp"].write_text(TRAIN_CFG.format(variant="lpp"), encoding="utf-8")
    paths["sweep"].write_text(SWEEP_CFG, encoding="utf-8")
    return paths


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo_data", help="output directory")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    paths = build(args.out, args.seed)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
