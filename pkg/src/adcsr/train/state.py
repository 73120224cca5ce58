"""Loss logging and resumable training state.

The loss log is an append-only CSV of (step, loss_name, value) rows with a
fixed float format, so identical runs produce byte-identical logs. Training
state rides the normal checkpoint container: module tensors and Adam moments
are packed into one WeightStore under reserved prefixes ('/'-separated to
stay disjoint from model weight names, which use dots).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch

from ..models.store import WeightStore
from .losses import TrainError

LOG_HEADER = "step,loss_name,value"


class LossLog:
    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        exists = self.path.exists()
        self._f = open(self.path, "a" if append else "w")
        if not (append and exists):
            self._f.write(LOG_HEADER + "\n")
            self._f.flush()

    def record(self, step: int, name: str, value: float) -> None:
        self._f.write(f"{step},{name},{value:.10e}\n")

    def flush(self) -> None:
        self._f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self) -> "LossLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_loss_log(path) -> list[tuple[int, str, float]]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != LOG_HEADER.split(","):
            raise TrainError(f"{path}: not a loss log (header {header})")
        for row in reader:
            if len(row) != 3:
                raise TrainError(f"{path}: malformed row {row}")
            rows.append((int(row[0]), row[1], float(row[2])))
    return rows


def loss_series(rows, name: str) -> list[tuple[int, float]]:
    return [(step, value) for step, n, value in rows if n == name]


# ---------------------------------------------------------------------------
# State packing


def pack_module(module: torch.nn.Module, prefix: str, ws: WeightStore) -> None:
    for name, t in module.state_dict().items():
        ws[f"{prefix}/{name}"] = t.detach().cpu().numpy().copy()


def unpack_module(module: torch.nn.Module, prefix: str, ws: WeightStore) -> None:
    head = prefix + "/"
    state = {}
    for key, arr in ws.items():
        if key.startswith(head):
            state[key[len(head):]] = torch.from_numpy(np.ascontiguousarray(arr))
    if not state:
        raise TrainError(f"state has no tensors under {prefix!r}")
    module.load_state_dict(state)


def pack_adam(
    opt: torch.optim.Adam, named_params: list[tuple[str, torch.nn.Parameter]],
    prefix: str, ws: WeightStore,
) -> None:
    for name, p in named_params:
        st = opt.state.get(p)
        if not st:
            continue
        ws[f"{prefix}/{name}/step"] = np.asarray(float(st["step"]), dtype=np.float32)
        ws[f"{prefix}/{name}/exp_avg"] = st["exp_avg"].detach().cpu().numpy().copy()
        ws[f"{prefix}/{name}/exp_avg_sq"] = st["exp_avg_sq"].detach().cpu().numpy().copy()


def unpack_adam(
    opt: torch.optim.Adam, named_params: list[tuple[str, torch.nn.Parameter]],
    prefix: str, ws: WeightStore,
) -> None:
    for name, p in named_params:
        key = f"{prefix}/{name}/exp_avg"
        if key not in ws:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(ws[f"{prefix}/{name}/step"]), dtype=torch.float32),
            "exp_avg": torch.from_numpy(ws[key].copy()),
            "exp_avg_sq": torch.from_numpy(ws[f"{prefix}/{name}/exp_avg_sq"].copy()),
        }
