"""Unsupervised training loop, evaluation, generalization sweeps, config
files, and metrics export.

Training draws fresh random instances every minibatch, pushes them through
forward -> head extraction -> feasibility projection -> sum rate, and ascends
the batch mean with RMSProp. Everything is deterministic given (config, seed).
"""

import csv
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import baselines, chansim, engnn, numkernel as nk, objectives
from .chansim import GeometryConfig, NumericalError
from .engnn import ConfigError, ENGNNConfig

METRICS_HEADER = ["run_id", "epoch", "mean_sum_rate", "residual_max", "wall_seconds"]
SAMPLES_HEADER = ["sample", "sum_rate", "residual", "infer_seconds"]

SWEEP_AXES = ("n_pairs", "n_ues", "n_bss", "noise_dbm", "field_size", "budget_dbm",
              "n_train_samples")


@dataclass
class TrainConfig:
    """Desk-scale defaults; heavier production settings remain reachable via file."""

    scenario: str = "ic"
    geometry: GeometryConfig = field(default_factory=lambda: GeometryConfig())
    net: ENGNNConfig | None = None
    epochs: int = 100
    minibatches: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    rho: float = 0.99
    epsilon: float = 1e-8
    seed: int = 0
    checkpoint_path: str = "checkpoint.bin"
    hidden: int = 8
    layers: int = 1
    output_head: str = "edge"
    aggregator: str = "max"

    def __post_init__(self):
        if self.scenario not in chansim.KINDS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.epochs < 0 or self.minibatches < 1 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0; minibatches and batch size >= 1")

    def resolved_net(self):
        if self.net is not None:
            return self.net
        return engnn.config_for_scenario(self.scenario, self.geometry.n_antennas,
                                         hidden=self.hidden, layers=self.layers,
                                         output_head=self.output_head,
                                         aggregator=self.aggregator)


@dataclass
class MetricsRow:
    run_id: str
    epoch: int
    mean_sum_rate: float
    residual_max: float
    wall_seconds: float

    def __post_init__(self):
        if self.residual_max < 0:
            raise ValueError("constraint residual cannot be negative")


def batch_seed(base_seed, epoch, minibatch, index):
    return [int(base_seed), int(epoch), int(minibatch), int(index)]


def _loss_for_instance(inst, graph, cfg_net, params):
    raw = engnn.forward(graph, cfg_net, params)
    head = engnn.extract_variables(raw, inst, cfg_net)
    variables = objectives.normalize(head, inst)
    report = objectives.evaluate(inst, variables)
    return report.sum_rate, variables


def _calibrate_scales(scenario, geometry, seed, n_probe=8):
    """Fixed per-family input scalings from a probe batch's RMS statistics.

    Folding these constants into the preprocessing affine maps keeps raw
    physical magnitudes (channel entries around 1e-6, noise standard
    deviations around 1e-7) from starving the first layer; they are frozen
    into the config and ride along in checkpoints.
    """
    acc = np.zeros(3)
    cnt = np.zeros(3)
    for i in range(n_probe):
        _, g = chansim.build_instance(scenario, geometry, chansim.sample_seed(seed, i))
        for j, arr in enumerate((g.f_tx, g.f_rx, g.e)):
            acc[j] += float((arr ** 2).sum())
            cnt[j] += arr.size
    rms = np.sqrt(acc / np.maximum(cnt, 1))
    return tuple(1.0 / r if r > 0 else 1.0 for r in rms)


def train(cfg, log=None):
    """Run the unsupervised loop; returns (params, net config, metrics rows).

    A checkpoint lands at cfg.checkpoint_path after every epoch and at the
    end (epochs=0 stores the raw initialization).
    """
    net = cfg.resolved_net()
    if cfg.net is None:
        s_tx, s_rx, s_e = _calibrate_scales(cfg.scenario, cfg.geometry, cfg.seed)
        net = ENGNNConfig(**{**net.to_dict(), "input_scale_tx": s_tx,
                             "input_scale_rx": s_rx, "input_scale_e": s_e})
    params = engnn.init_params(net, seed=cfg.seed)
    tensors = params.tensors()
    state = nk.RMSPropState(learning_rate=cfg.learning_rate, decay=cfg.rho,
                            epsilon=cfg.epsilon)
    rows = []
    run_id = f"{cfg.scenario}-seed{cfg.seed}"
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        epoch_rates = []
        epoch_residual = 0.0
        for mb in range(cfg.minibatches):
            losses = []
            for i in range(cfg.batch_size):
                seed = batch_seed(cfg.seed, epoch, mb, i)
                inst, graph = chansim.build_instance(cfg.scenario, cfg.geometry, seed)
                loss, variables = _loss_for_instance(inst, graph, net, params)
                losses.append(loss)
                epoch_residual = max(epoch_residual,
                                     objectives.constraint_residual(inst, variables))
            batch_mean = tsum_list(losses) * (1.0 / len(losses))
            if not np.isfinite(batch_mean.data):
                raise NumericalError(
                    f"non-finite training loss in epoch {epoch} minibatch {mb}; "
                    f"reproduce with batch seeds {batch_seed(cfg.seed, epoch, mb, 0)}..")
            nk.backward(batch_mean)
            grads = [t.grad if t.grad is not None else np.zeros_like(t.data)
                     for t in tensors]
            nk.rmsprop_step(tensors, grads, state)
            epoch_rates.append(float(batch_mean.data))
        row = MetricsRow(run_id, epoch, float(np.mean(epoch_rates)), epoch_residual,
                         time.perf_counter() - t_start)
        rows.append(row)
        if log:
            log(f"epoch {epoch}: train mean sum rate {row.mean_sum_rate:.4f} "
                f"(residual {row.residual_max:.2e})")
        engnn.save_checkpoint(cfg.checkpoint_path, net, params,
                              extra_meta={"train": _train_meta(cfg), "epoch": epoch})
    engnn.save_checkpoint(cfg.checkpoint_path, net, params,
                          extra_meta={"train": _train_meta(cfg), "epoch": cfg.epochs})
    return params, net, rows


def tsum_list(tensors):
    total = tensors[0]
    for t in tensors[1:]:
        total = total + t
    return total


def _train_meta(cfg):
    meta = asdict(cfg)
    meta["geometry"] = cfg.geometry.to_dict()
    meta["net"] = None if cfg.net is None else cfg.net.to_dict()
    return meta


def evaluate(net, params, scenario, geometry, n_samples, seed, out_csv=None):
    """Deterministic test set; returns (MetricsRow, per-sample row dicts)."""
    samples = []
    t_start = time.perf_counter()
    for i in range(n_samples):
        inst, graph = chansim.build_instance(scenario, geometry,
                                             chansim.sample_seed(seed, i))
        t0 = time.perf_counter()
        with nk.no_grad():
            raw = engnn.forward(graph, net, params)
            head = engnn.extract_variables(raw, inst, net)
            variables = objectives.normalize(head, inst)
        infer_s = time.perf_counter() - t0
        report = objectives.evaluate(inst, variables)
        samples.append({
            "sample": i,
            "sum_rate": report.sum_rate_value(),
            "residual": objectives.constraint_residual(inst, variables),
            "infer_seconds": infer_s,
        })
    rates = [s["sum_rate"] for s in samples]
    residuals = [s["residual"] for s in samples]
    row = MetricsRow(f"eval-{scenario}-seed{seed}", 0, float(np.mean(rates)),
                     float(np.max(residuals)) if residuals else 0.0,
                     time.perf_counter() - t_start)
    if out_csv is not None:
        write_csv(out_csv, SAMPLES_HEADER, [[s[c] for c in SAMPLES_HEADER]
                                            for s in samples])
    return row, samples


def run_baseline(scenario, instance, which, solver_cfg=None):
    if which == "wmmse":
        if scenario == "ic":
            return baselines.wmmse_ic(instance, solver_cfg)
        if scenario == "ibc":
            return baselines.wmmse_ibc_power(instance, solver_cfg)
        return baselines.wmmse_coop(instance, solver_cfg)
    if which == "gp":
        if scenario != "coop":
            raise ConfigError("gradient projection baseline applies to the "
                              "cooperative scenario only")
        return baselines.gp_coop(instance, solver_cfg)
    raise ConfigError(f"unknown baseline {which!r}")


def _apply_axis(geometry, scenario, axis, value):
    """New GeometryConfig with one swept knob changed."""
    d = geometry.to_dict()
    if axis == "n_pairs":
        if scenario != "ic":
            raise ConfigError("n_pairs applies to the pairs scenario only")
        d["n_tx"] = d["n_rx"] = int(value)
    elif axis == "n_ues":
        if scenario == "ic":
            raise ConfigError("use n_pairs for the pairs scenario")
        d["n_rx"] = int(value)
    elif axis == "n_bss":
        if scenario == "ic":
            raise ConfigError("use n_pairs for the pairs scenario")
        d["n_tx"] = int(value)
    elif axis == "noise_dbm":
        d["noise_dbm"] = float(value)
    elif axis == "field_size":
        d["field_size"] = float(value)
    elif axis == "budget_dbm":
        d["budget_dbm"] = float(value)
    elif axis == "n_train_samples":
        pass  # handled by the sweep driver (retraining), geometry unchanged
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    return GeometryConfig.from_dict(d)


def sweep(net, params, scenario, geometry, axis, values, n_samples, seed,
          baseline="none", solver_cfg=None, train_cfg=None, out_csv=None, log=None):
    """Evaluate (and for n_train_samples, retrain) across axis values.

    Returns a list of row dicts; baseline columns rerun the requested solver
    on the same seeded instances.
    """
    rows = []
    for value in values:
        if axis == "n_train_samples":
            if train_cfg is None:
                raise ConfigError("n_train_samples sweep needs a training config")
            budget = int(value)
            per_epoch = train_cfg.minibatches * train_cfg.batch_size
            epochs = max(1, int(np.ceil(budget / per_epoch)))
            cfg_v = TrainConfig(**{**asdict(train_cfg),
                                   "geometry": train_cfg.geometry,
                                   "net": train_cfg.net,
                                   "epochs": epochs})
            params_v, net_v, _ = train(cfg_v)
            geo_v = train_cfg.geometry
        else:
            params_v, net_v = params, net
            geo_v = _apply_axis(geometry, scenario, axis, value)
        row, samples = evaluate(net_v, params_v, scenario, geo_v, n_samples, seed)
        entry = {"axis": axis, "value": value, "engnn_mean_sum_rate": row.mean_sum_rate,
                 "residual_max": row.residual_max}
        if baseline != "none":
            rates = []
            for i in range(n_samples):
                inst, _ = chansim.build_instance(scenario, geo_v,
                                                 chansim.sample_seed(seed, i))
                rates.append(run_baseline(scenario, inst, baseline,
                                          solver_cfg).report.sum_rate_value())
            entry[f"{baseline}_mean_sum_rate"] = float(np.mean(rates))
        rows.append(entry)
        if log:
            log(f"{axis}={value}: engnn {entry['engnn_mean_sum_rate']:.4f}"
                + (f", {baseline} {entry[f'{baseline}_mean_sum_rate']:.4f}"
                   if baseline != "none" else ""))
    if out_csv is not None:
        header = list(rows[0].keys()) if rows else []
        write_csv(out_csv, header, [[r[c] for c in header] for r in rows])
    return rows


def write_csv(path_or_buf, header, rows):
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    f = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if own:
            f.close()


# ---------------------------------------------------------------------------
# plain-text key-value config files


_GEOMETRY_KEYS = {"n_tx": int, "n_rx": int, "n_antennas": int, "field_size": float,
                  "min_bs_spacing": float, "serve_dist_min": float,
                  "serve_dist_max": float, "budget_dbm": float, "noise_dbm": float}
_TRAIN_KEYS = {"epochs": int, "minibatches": int, "batch_size": int,
               "learning_rate": float, "rho": float, "epsilon": float,
               "hidden": int, "layers": int}


def parse_config_text(text):
    """Parse `key = value` lines ('#' comments) into a TrainConfig.

    Recognized keys: scenario, seed, checkpoint, output_head, aggregator,
    n_pairs (alias for n_tx+n_rx), the geometry keys (n_tx, n_rx, n_antennas,
    field_size, min_bs_spacing, serve_dist_min/max, budget_dbm, noise_dbm),
    and the training keys (epochs, minibatches, batch_size, learning_rate,
    rho, epsilon, hidden, layers).
    """
    values = {}
    for ln, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw_line!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()

    def parse(key, val, kind):
        try:
            return kind(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {val!r}") from exc

    geo_kwargs = {}
    train_kwargs = {}
    serve = [50.0, 250.0]
    for key, val in values.items():
        if key == "scenario":
            train_kwargs["scenario"] = val
        elif key == "seed":
            train_kwargs["seed"] = geo_kwargs["seed"] = parse(key, val, int)
        elif key == "checkpoint":
            train_kwargs["checkpoint_path"] = val
        elif key == "output_head":
            train_kwargs["output_head"] = val
        elif key == "aggregator":
            train_kwargs["aggregator"] = val
        elif key == "n_pairs":
            geo_kwargs["n_tx"] = geo_kwargs["n_rx"] = parse(key, val, int)
        elif key == "serve_dist_min":
            serve[0] = parse(key, val, float)
        elif key == "serve_dist_max":
            serve[1] = parse(key, val, float)
        elif key in _GEOMETRY_KEYS:
            geo_kwargs[key] = parse(key, val, _GEOMETRY_KEYS[key])
        elif key in _TRAIN_KEYS:
            train_kwargs[key] = parse(key, val, _TRAIN_KEYS[key])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    geo_kwargs["serve_dist"] = tuple(serve)
    geometry = GeometryConfig(**geo_kwargs)
    return TrainConfig(geometry=geometry, **train_kwargs)


def load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())
