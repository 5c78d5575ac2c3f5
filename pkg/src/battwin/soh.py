"""SOH estimation from tail voltage and identified aging parameters.

Three input modes mirror the ablation: fused (voltage + parameters),
voltage-only, parameter-only. The voltage branch is a small causal temporal
convolution stack, the parameter branch a dense encoder; both project to
20-dimensional latents that are concatenated into the output head. Training
is full-batch Adam on MSE; evaluation harnesses cover leave-one-out splits
and the linear-regression extrapolation study.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from battwin.errors import (
    Divergence, InsufficientFolds, InsufficientSpan, MissingLabel, ZeroVariance,
)

VOLTAGE_POINTS = 100
LATENT_DIM = 20
MODES = ("fused", "voltage-only", "param-only")


@dataclass
class SohSample:
    voltage: np.ndarray       # (100,) resampled tail voltage, V
    params: np.ndarray        # (eps_plus_scale, eps_minus_scale)
    soh: float
    cell_id: int
    condition: str
    protocol: str
    cycle: int

    def __post_init__(self):
        self.voltage = np.asarray(self.voltage, dtype=float)
        self.params = np.asarray(self.params, dtype=float)
        if len(self.voltage) != VOLTAGE_POINTS:
            raise ValueError(f"voltage vector must have {VOLTAGE_POINTS} points")
        if not np.isfinite(self.soh) or not 0.0 < self.soh <= 1.05:
            raise MissingLabel(f"invalid SOH label {self.soh!r}")


def resample_voltage(time, voltage, n: int = VOLTAGE_POINTS) -> np.ndarray:
    """Deterministic linear resampling onto n uniform time points."""
    time = np.asarray(time, dtype=float)
    grid = np.linspace(time[0], time[-1], n)
    return np.interp(grid, time, np.asarray(voltage, dtype=float))


def build_dataset(records, identified, mode: str = "fused") -> list:
    """SohSamples from campaign records plus their identification results.

    records: AgingRecords (campaign); identified: matching IdentifiedParameters
    list (same order). The mode only tags the samples; branch selection happens
    in the model so fused/voltage-only datasets share identical voltage vectors.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if len(records) != len(identified):
        raise ValueError("records and identifications must align")
    samples = []
    for rec, idp in zip(records, identified):
        if rec.failed or rec.segment is None:
            continue
        samples.append(SohSample(
            voltage=resample_voltage(rec.segment.time, rec.segment.voltage),
            params=np.array([idp.eps_plus_scale, idp.eps_minus_scale]),
            soh=rec.soh,
            cell_id=rec.cell_id,
            condition=rec.condition.tag,
            protocol=rec.segment.protocol,
            cycle=rec.cycle,
        ))
    return samples


class _CausalConv(nn.Module):
    def __init__(self, c_in, c_out, dilation):
        super().__init__()
        self.pad = 2 * dilation
        self.conv = nn.Conv1d(c_in, c_out, kernel_size=3, dilation=dilation)

    def forward(self, x):
        return self.conv(nn.functional.pad(x, (self.pad, 0)))


class SohNet(nn.Module):
    """TCN voltage encoder + dense parameter encoder + fusion head."""

    def __init__(self, mode: str = "fused"):
        super().__init__()
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.voltage_encoder = nn.ModuleList([
            _CausalConv(1, 64, 1), _CausalConv(64, 32, 2), _CausalConv(32, 20, 4),
        ])
        self.param_encoder = nn.Sequential(
            nn.Linear(2, LATENT_DIM), nn.ReLU(),
            nn.Linear(LATENT_DIM, LATENT_DIM), nn.ReLU(),
            nn.Linear(LATENT_DIM, LATENT_DIM), nn.ReLU(),
        )
        head_in = {"fused": 2 * LATENT_DIM, "voltage-only": LATENT_DIM,
                   "param-only": LATENT_DIM}[mode]
        self.head = nn.Sequential(
            nn.Linear(head_in, 64), nn.ReLU(),
            nn.Linear(64, 32), nn.ReLU(),
            nn.Linear(32, 1),
        )

    def _voltage_latent(self, volts):
        x = volts.unsqueeze(1)  # (n, 1, 100)
        for block in self.voltage_encoder:
            x = torch.relu(block(x))
        return x.mean(dim=2)    # global average pooling -> (n, 20)

    def forward(self, volts, params):
        feats = []
        if self.mode in ("fused", "voltage-only"):
            feats.append(self._voltage_latent(volts))
        if self.mode in ("fused", "param-only"):
            feats.append(self.param_encoder(params))
        return self.head(torch.cat(feats, dim=1)).squeeze(-1)


@dataclass
class SohModel:
    """Trained net plus the dataset normalization it was fit with."""

    net: SohNet
    mode: str
    v_mean: float
    v_std: float
    train_loss: float
    seed: int

    def predict(self, samples) -> np.ndarray:
        volts, params = _tensors(samples, self.v_mean, self.v_std)
        self.net.eval()
        with torch.no_grad():
            return self.net(volts, params).numpy().astype(float)


def _tensors(samples, v_mean, v_std):
    volts = np.stack([s.voltage for s in samples])
    params = np.stack([s.params for s in samples])
    volts = (volts - v_mean) / v_std
    return (torch.tensor(volts, dtype=torch.float32),
            torch.tensor(params, dtype=torch.float32))


def train_soh(samples, mode: str = "fused", seed: int = 0, *,
              epochs: int = 2000, lr: float = 1e-3) -> SohModel:
    """Full-batch Adam on MSE; deterministic per seed."""
    if not samples:
        raise ValueError("empty training set")
    v_all = np.stack([s.voltage for s in samples])
    v_mean = float(v_all.mean())
    v_std = float(v_all.std()) or 1.0
    torch.manual_seed(seed)
    net = SohNet(mode)
    volts, params = _tensors(samples, v_mean, v_std)
    target = torch.tensor([s.soh for s in samples], dtype=torch.float32)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    loss_val = np.inf
    for _ in range(epochs):
        opt.zero_grad()
        loss = torch.mean((net(volts, params) - target) ** 2)
        if not torch.isfinite(loss):
            raise Divergence("non-finite SOH training loss")
        loss.backward()
        opt.step()
        loss_val = float(loss.detach())
    return SohModel(net=net, mode=mode, v_mean=v_mean, v_std=v_std,
                    train_loss=loss_val, seed=seed)


def train_soh_best_of(samples, mode: str, seeds=(0, 1, 2, 3, 4), **kw) -> SohModel:
    """Best of several random initializations, selected by training loss."""
    models = [train_soh(samples, mode, seed=s, **kw) for s in seeds]
    return min(models, key=lambda m: m.train_loss)


def evaluate_mape(model: SohModel, samples) -> float:
    if not samples:
        raise ValueError("empty test set")
    pred = model.predict(samples)
    true = np.array([s.soh for s in samples])
    return float(np.mean(np.abs(pred - true) / true) * 100.0)


def pearson_correlation(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3 or len(x) != len(y):
        raise ValueError("need at least three paired samples")
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        raise ZeroVariance("constant input to correlation")
    return float(np.corrcoef(x, y)[0, 1])


def fit_linear_on_params(samples):
    """SOH ~ 1 + eps_plus + eps_minus least squares; returns predict(samples)."""
    a = np.column_stack([np.ones(len(samples)),
                         np.stack([s.params for s in samples])])
    b = np.array([s.soh for s in samples])
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)

    def predict(test):
        at = np.column_stack([np.ones(len(test)),
                              np.stack([s.params for s in test])])
        return at @ coef

    return predict


def extrapolation_study(samples, threshold: float,
                        method: str = "linear-on-params", *,
                        seeds=(0, 1, 2, 3, 4), epochs: int = 2000) -> float:
    """Fit on SOH >= threshold, report MAPE on SOH < threshold."""
    train = [s for s in samples if s.soh >= threshold]
    test = [s for s in samples if s.soh < threshold]
    if not train or not test:
        raise InsufficientSpan(
            f"ledger does not span the {threshold:.2f} SOH threshold")
    if method == "linear-on-params":
        pred = fit_linear_on_params(train)(test)
        true = np.array([s.soh for s in test])
        return float(np.mean(np.abs(pred - true) / true) * 100.0)
    if method == "net-on-voltage":
        model = train_soh_best_of(train, "voltage-only", seeds=seeds,
                                  epochs=epochs)
        return evaluate_mape(model, test)
    raise ValueError(f"unknown method {method!r}")


def cross_eval(samples, split: str, modes=("param-only", "voltage-only"), *,
               seeds=(0, 1, 2, 3, 4), epochs: int = 2000) -> dict:
    """Per-fold MAPE table for the requested leave-one-out split."""
    keys = {
        "leave-one-cell": lambda s: s.cell_id,
        "leave-one-profile": lambda s: s.protocol,
        "leave-one-condition": lambda s: s.condition,
    }
    if split not in keys:
        raise ValueError(f"unknown split {split!r}")
    key = keys[split]
    groups = sorted({key(s) for s in samples}, key=str)
    if len(groups) < 2:
        raise InsufficientFolds(f"{split} needs at least two groups")
    table = {}
    for g in groups:
        train = [s for s in samples if key(s) != g]
        test = [s for s in samples if key(s) == g]
        row = {}
        for mode in modes:
            if mode == "linear-on-params":
                pred = fit_linear_on_params(train)(test)
                true = np.array([s.soh for s in test])
                row[mode] = float(np.mean(np.abs(pred - true) / true) * 100.0)
            else:
                model = train_soh_best_of(train, mode, seeds=seeds,
                                          epochs=epochs)
                row[mode] = evaluate_mape(model, test)
        table[g] = row
    return table


def cross_eval_to_csv(table: dict, path) -> None:
    modes = sorted({m for row in table.values() for m in row})
    with open(path, "w") as fh:
        fh.write("fold," + ",".join(modes) + "\n")
        for g, row in table.items():
            fh.write(f"{g}," + ",".join(f"{row.get(m, float('nan')):.4f}"
                                        for m in modes) + "\n")
