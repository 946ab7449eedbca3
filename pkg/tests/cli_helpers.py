import numpy as np

from subspace_inference import Dataset
from subspace_inference.cli.config import config_from_dict
from subspace_inference.cli.datasets import save_csv_dataset


def tiny_table(n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, (n, 2))
    y = np.sin(x[:, 0]) + 0.5 * x[:, 1] + 0.1 * rng.standard_normal(n)
    return Dataset(x, 10.0 + 3.0 * y, column_names=("a", "b", "y"))


TINY = {
    "data": {"source": "tiny.csv", "target_column": "y", "test_fraction": 0.2},
    "model": {"hidden_sizes": [4]},
    "train": {"learning_rate": 1e-2, "num_steps": 100, "batch_size": 8},
    "swa": {"learning_rate": 1e-2, "num_steps": 40, "capture_frequency": 5, "max_deviation_cols": 5, "batch_size": 8},
    "subspace": {"kind": "pca", "rank": 2},
    "curve": {"num_steps": 30, "batch_size": 8},
    "inference": {"temperature": 1.0, "num_samples": 6, "burn_in": 5, "vi_steps": 50},
    "protocol": {"trials": 2, "seed": 7},
}


def tiny_config(tmp_path, **sections):
    path = tmp_path / "tiny.csv"
    if not path.exists():
        save_csv_dataset(tiny_table(), path)
    raw = {k: dict(v) for k, v in TINY.items()}
    raw["data"]["source"] = str(path)
    for name, values in sections.items():
        raw.setdefault(name, {}).update(values)
    return config_from_dict(raw).validate()


def write_toml(path, sections):
    lines = []
    for name, values in sections.items():
        lines.append(f"[{name}]")
        for k, v in values.items():
            if isinstance(v, str):
                lines.append(f'{k} = "{v}"')
            elif isinstance(v, bool):
                lines.append(f"{k} = {str(v).lower()}")
            else:
                lines.append(f"{k} = {v!r}")
    path.write_text("\n".join(lines) + "\n")
