"""Compare the compiled training core against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--epochs N]

For each network size it times full-batch gradient evaluation and a short
training run with each available backend, checks the two agree, and prints
the speedup of the compiled core.
"""

import argparse
import timeit

import numpy as np

from mlab import backend, nn

CASES = [
    # (layer sizes, samples, batch size)
    ((2, 16, 16, 4), 512, 32),
    ((2, 32, 32, 4), 512, 32),
    ((4, 64, 64, 4), 2048, 32),
    ((4, 8, 8, 4), 64, 8),
]


def _data(sizes, n, seed=0):
    rng = np.random.default_rng(seed)
    return nn.Batch(rng.standard_normal((n, sizes[0])), rng.integers(0, sizes[-1], n))


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_case(sizes, n, batch_size, epochs, repeat):
    data = _data(sizes, n)
    start = nn.init(nn.ArchitectureDescriptor(sizes, "tanh"), 1)
    teacher = nn.init(nn.ArchitectureDescriptor(sizes, "tanh"), 2)
    objective = nn.DistillConfig(teacher, temperature=2.0, mix=0.5)
    teacher_logits, _ = nn.forward(teacher, data.inputs)
    args = ([np.array(w) for w in start.weights], [np.array(b) for b in start.biases],
            data.inputs, data.labels.astype(np.int64), teacher_logits,
            start.descriptor.activation_code, 2.0, 0.5)

    times, results = {}, {}
    for name in backend.available():
        k = backend.get_kernels(name)
        grads = _best(lambda: k.batch_grads(*args), repeat)
        train = _best(lambda: nn.train(start, data, objective, epochs=epochs, seed=3,
                                       batch_size=batch_size, backend=name), repeat)
        times[name] = (grads, train)
        results[name] = nn.train(start, data, objective, epochs=epochs, seed=3,
                                 batch_size=batch_size, backend=name)

    if len(results) == 2:
        diff = max(float(np.max(np.abs(a - b)))
                   for a, b in zip(results["python"].parameters(), results["compiled"].parameters()))
    else:
        diff = float("nan")
    return times, diff


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--epochs", type=int, default=5)
    args = parser.parse_args()

    names = backend.available()
    print(f"backends: {', '.join(names)} (default {backend.DEFAULT})")
    header = f"{'layers':<18}{'n':>6}{'batch':>6}"
    for name in names:
        header += f"{name + ' grad':>16}{name + ' train':>16}"
    header += f"{'train speedup':>15}{'max |diff|':>12}"
    print(header)
    for sizes, n, batch_size in CASES:
        times, diff = bench_case(sizes, n, batch_size, args.epochs, args.repeat)
        row = f"{str(list(sizes)):<18}{n:>6}{batch_size:>6}"
        for name in names:
            g, t = times[name]
            row += f"{g * 1e3:>13.3f} ms{t * 1e3:>13.1f} ms"
        if "compiled" in times:
            row += f"{times['python'][1] / times['compiled'][1]:>14.2f}x{diff:>12.1e}"
        print(row)


if __name__ == "__main__":
    main()
