"""Synthetic run-to-failure fleet in C-MAPSS text format.

Each unit degrades along health h(t) = (t / T)^p with a per-unit exponent;
three sensors respond to h with unit-specific gains plus Gaussian noise, the
remaining columns stay uninformative. Test units are pruned before failure
and ship with their true remaining life.
"""

import numpy as np

from latentrul.seeding import STREAM_FLEET, substream

N_CHANNELS = 3
SENSOR_BASES = (500.0, 40.0, 1200.0)
SENSOR_AMPS = (35.0, -6.0, 110.0)


def _unit_lines(unit_id, life, n_keep, rng, noise=0.02):
    """Text lines for one unit, keeping the first n_keep cycles."""
    p = rng.uniform(1.5, 2.5)
    gains = rng.uniform(0.8, 1.2, size=N_CHANNELS)
    t = np.arange(1, life + 1)
    health = (t / life) ** p
    lines = []
    for cycle in range(1, n_keep + 1):
        sensors = np.zeros(21)
        for j in range(N_CHANNELS):
            clean = SENSOR_BASES[j] + gains[j] * SENSOR_AMPS[j] * health[cycle - 1]
            sensors[j] = clean + rng.normal(0.0, noise * abs(SENSOR_AMPS[j]))
        fields = [str(unit_id), str(cycle), "0.0", "0.0", "100.0"]
        fields += [repr(float(v)) for v in sensors]
        lines.append(" ".join(fields))
    return lines


def generate_fleet(seed, n_train=40, n_test=10, life_range=(80, 150), noise=0.02):
    """(train_text, test_text, rul_text) for one seeded fleet."""
    rng = substream(seed, STREAM_FLEET)
    train_lines = []
    for unit in range(1, n_train + 1):
        life = int(rng.integers(life_range[0], life_range[1] + 1))
        train_lines += _unit_lines(unit, life, life, rng, noise)

    test_lines, ruls = [], []
    for unit in range(1, n_test + 1):
        life = int(rng.integers(life_range[0], life_range[1] + 1))
        n_keep = int(round(rng.uniform(0.55, 0.85) * life))
        test_lines += _unit_lines(unit, life, n_keep, rng, noise)
        ruls.append(str(life - n_keep))

    return (
        "\n".join(train_lines) + "\n",
        "\n".join(test_lines) + "\n",
        "\n".join(ruls) + "\n",
    )


def write_fleet(directory, seed, **kwargs):
    """Write train/test/RUL files into directory; returns their paths."""
    train_text, test_text, rul_text = generate_fleet(seed, **kwargs)
    paths = {
        "train": directory / "train_SYN.txt",
        "test": directory / "test_SYN.txt",
        "rul": directory / "RUL_SYN.txt",
    }
    paths["train"].write_text(train_text)
    paths["test"].write_text(test_text)
    paths["rul"].write_text(rul_text)
    return paths
