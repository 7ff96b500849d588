"""
Synthetic Data Generator
Run this script to write a seeded synthetic logistic dataset as a LIBSVM file.
"""

import click

from datasets import load_libsvm, serialize_libsvm, synth_logistic


@click.command()
@click.option("--n", "n", type=click.IntRange(min=1), default=50, show_default=True, help="Number of samples.")
@click.option("--m", "m", type=click.IntRange(min=1), default=5, show_default=True, help="Feature dimension.")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, writable=True), default="synthetic.libsvm", show_default=True)
def main(n: int, m: int, seed: int, out: str):
    """Generate and save a synthetic dataset, then read it back to confirm the file."""
    print("=" * 60)
    print(f"Generating synthetic logistic data: N={n}, M={m}, seed={seed}")
    print("=" * 60)

    dataset = synth_logistic(n, m, seed)
    positives = int((dataset.labels > 0).sum())
    print(f"   Positive labels: {positives} ({positives / n:.1%})")

    with open(out, "w", encoding="utf-8", newline="\n") as f:
        f.write(serialize_libsvm(dataset))
    print(f"✓ Wrote {out}")

    reloaded = load_libsvm(out)
    if reloaded == dataset:
        print("✓ File reads back to the identical dataset")
    else:
        print("⚠ Warning: file does not read back to the identical dataset")
    print("=" * 60)


if __name__ == "__main__":
    main()
