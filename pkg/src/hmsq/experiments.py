"""Experiment driver: rate-distortion, transition, loss, scalable and delayed sweeps.

Every sweep returns a list of :class:`ResultRow`, one per grid cell and
method, averaged over the configured seeds.  Rows are sorted before they are
written so the CSV only depends on (config, seeds).  Wall-clock times go to a
separate timing file because they are not reproducible.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import loss as ls
from . import scalable as sc
from . import tracking as tr
from .hmm import HmmModel, sample, stationary_distribution

DB_NOTE = "distortion_db = 10*log10(MSE)"
LOSS_RATE_NOTE = "loss sweep coded at rate_bits (default 4); the rate behind the reference tables is not documented"


class ConfigError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    means: list = field(default_factory=lambda: [-1.5, 1.5])
    variances: list = field(default_factory=lambda: [1.0, 1.0])
    switch: float = 0.1  # a12 = a21 of the symmetric two-state source
    model_path: str | None = None
    rates: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    T: int = 5
    train_len: int = 100_000
    eval_len: int = 200_000
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    em_rounds: int = 10
    fsq_states: int = 5
    bound_restarts: int = 20
    a_grid: list = field(default_factory=lambda: [0.01, 0.02, 0.04, 0.06, 0.08, 0.1])
    loss_rates: list = field(default_factory=lambda: [0.0, 0.01, 0.05, 0.1])
    loss_a: list = field(default_factory=lambda: [0.1, 0.05, 0.01])
    loss_rate_bits: int = 4
    r12: int = 3
    r2: list = field(default_factory=lambda: [2, 3, 4, 5])
    L: int = 1
    L_extra: list = field(default_factory=list)  # further lookaheads for the delayed sweep
    enh_iters: int = 1
    # the delayed sweep compares lookaheads, so its enhancement quantizers are
    # designed to convergence instead of the single online iteration
    delayed_enh_iters: int = 1000
    delayed_enh_tol: float = 1e-6
    trans_rate: int = 4
    scalable_layers: bool = False  # transition sweep: two layers at trans_rate each
    clean_bound: bool = True
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in names:
                raise ConfigError(k, "unknown field")
            kw[k] = v
        try:
            return cls(**kw)
        except TypeError as e:
            raise ConfigError("config", str(e)) from None

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """JSON, or ``key = value`` lines whose values are JSON literals (bare words are strings)."""
        text = Path(path).read_text()
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError:
            pass
        d = {}
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {ln}", "expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            try:
                d[k] = json.loads(v)
            except json.JSONDecodeError:
                d[k] = v
        return cls.from_dict(d)

    def validate(self):
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(name, msg)

        need(len(self.means) == len(self.variances) >= 1, "means", "means and variances need equal nonzero length")
        need(all(v > 0 for v in self.variances), "variances", "must be positive")
        need(0 < self.switch < 1, "switch", "must lie in (0, 1)")
        need(all(isinstance(r, int) and 0 <= r <= 12 for r in self.rates), "rates", "integers in [0, 12]")
        need(self.T >= 1, "T", "must be >= 1")
        need(self.train_len >= 1000, "train_len", "must be >= 1000")
        need(self.eval_len >= 1000, "eval_len", "must be >= 1000")
        need(len(self.seeds) >= 1, "seeds", "must be nonempty")
        need(all(0 <= p <= 1 for p in self.loss_rates), "loss_rates", "must lie in [0, 1]")
        need(all(0 < a < 1 for a in (*self.a_grid, *self.loss_a)), "a_grid", "must lie in (0, 1)")
        need(self.r12 >= 1 and all(r >= 1 for r in self.r2), "r2", "layer rates must be >= 1")
        need(self.L >= 0 and all(l >= 0 for l in self.L_extra), "L", "must be >= 0")
        need(self.enh_iters >= 1, "enh_iters", "must be >= 1")
        need(self.delayed_enh_iters >= 1, "delayed_enh_iters", "must be >= 1")
        need(self.delayed_enh_tol >= 0, "delayed_enh_tol", "must be >= 0")
        need(self.workers >= 1, "workers", "must be >= 1")
        need(self.fsq_states >= 1, "fsq_states", "must be >= 1")

    def model(self, switch: float | None = None) -> HmmModel:
        if self.model_path is not None and switch is None:
            return HmmModel.load(self.model_path)
        a = self.switch if switch is None else switch
        N = len(self.means)
        if N == 1:
            A = np.ones((1, 1))
        else:
            A = np.full((N, N), a / (N - 1))
            np.fill_diagonal(A, 1 - a)
        return HmmModel.gaussian(self.means, self.variances, A)


@dataclass(frozen=True, order=True)
class ResultRow:
    experiment: str
    method: str
    a: float
    rate: int
    r2: int = 0
    L: int = 0
    loss_rate: float = 0.0
    distortion_db: float = math.nan
    std_err: float = 0.0
    n_seeds: int = 1
    seed: int = 0  # first seed of the average

    def key(self):
        return (self.experiment, self.a, self.rate, self.r2, self.L, self.loss_rate, self.method)


FIELDS = [f.name for f in dataclasses.fields(ResultRow)]


def _db(x, y) -> float:
    return tr.mse_db(x, y)


def _seeds(seed: int, a: float):
    """Training and evaluation generators for one seed and source."""
    ss = np.random.SeedSequence([seed, int(round(a * 1e6))])
    s_train, s_eval, s_loss, s_misc = ss.spawn(4)
    return tuple(np.random.default_rng(s) for s in (s_train, s_eval, s_loss, s_misc))


def _data(cfg, model, seed, a):
    g_train, g_eval, g_loss, g_misc = _seeds(seed, a)
    _, tx = sample(model, cfg.train_len, g_train)
    _, x = sample(model, cfg.eval_len, g_eval)
    return tx, x, g_loss, g_misc


# --- single-seed jobs.  Each returns a list of (key fields dict, dB) -------

def _rd_job(cfg, seed, a, model, with_bounds=True, methods=("tracking", "dpcm", "fsq")):
    tx, x, _, g = _data(cfg, model, seed, a)
    out = []
    for R in cfg.rates:
        cell = dict(experiment="rd", a=a, rate=R)
        if R == 0:
            mean = float(stationary_distribution(model) @ model.means)
            d = _db(x, np.full_like(x, mean))
            out += [({**cell, "method": m}, d) for m in methods]
            continue
        if "tracking" in methods:
            system = tr.train_system(model, R, cfg.T, em_rounds=cfg.em_rounds, seed=g, obs=tx)
            out.append(({**cell, "method": "tracking"}, _db(x, tr.run_encoder(x, system).reconstruction)))
        if "dpcm" in methods:
            dp = bl.dpcm_train(tx, R)
            out.append(({**cell, "method": "dpcm"}, _db(x, bl.dpcm_encode(x, dp)[1])))
        if "fsq" in methods:
            fs = bl.fsq_train(tx, cfg.fsq_states, R, seed=seed)
            out.append(({**cell, "method": "fsq"}, _db(x, bl.fsq_encode(x, fs)[1])))
        if "static" in methods:
            cb = bl.fsq_train(tx, 1, R, seed=seed)
            out.append(({**cell, "method": "static"}, _db(x, bl.fsq_encode(x, cb)[1])))
        if with_bounds:
            out.append(({**cell, "method": "bound_switched"},
                        10 * math.log10(bl.bound_switched(model, R, cfg.bound_restarts, seed))))
            if cfg.clean_bound:
                out.append(({**cell, "method": "bound_clean"},
                            10 * math.log10(bl.bound_clean_history(model, R, x))))
    return out


def _trans_job(cfg, seed, a):
    model = cfg.model(a)
    if not cfg.scalable_layers:
        rows = _rd_job(dataclasses.replace(cfg, rates=[cfg.trans_rate]), seed, a, model,
                       with_bounds=False, methods=("tracking", "dpcm", "fsq", "static"))
        return [({**k, "experiment": "trans"}, d) for k, d in rows]
    tx, x, _, g = _data(cfg, model, seed, a)
    r2 = cfg.trans_rate
    cell = dict(experiment="trans", a=a, rate=cfg.trans_rate, r2=r2)
    base = tr.train_system(model, cfg.trans_rate, cfg.T, em_rounds=cfg.em_rounds, seed=g, obs=tx)
    st = sc.encode_scalable(x, sc.ScalableSystem(base, r2, 0, cfg.enh_iters))
    dp = bl.scalable_dpcm_train(tx, cfg.trans_rate, r2)
    erec = bl.scalable_dpcm_run(x, dp)[3]
    return [({**cell, "method": "scalable_tracking"}, _db(x, st.enh_reconstruction)),
            ({**cell, "method": "scalable_dpcm"}, _db(x, erec))]


def _loss_job(cfg, seed, a):
    model = cfg.model(a)
    tx, x, g_loss, g = _data(cfg, model, seed, a)
    R = cfg.loss_rate_bits
    dp = bl.dpcm_train(tx, R)
    fs = bl.fsq_train(tx, cfg.fsq_states, R, seed=seed)
    didx = bl.dpcm_encode(x, dp)[0]
    fidx = bl.fsq_encode(x, fs)[0]
    out = []
    for p in cfg.loss_rates:
        cell = dict(experiment="loss", a=a, rate=R, loss_rate=p)
        system = ls.train_lossy_system(model, R, p, n_classes=cfg.T, em_rounds=cfg.em_rounds, seed=g, obs=tx)
        chan = ls.LossChannel(p, seed=int(g_loss.integers(2**63)))
        stream = ls.simulate_loss(ls.encode_lossy(x, system), chan)
        mask = stream.received_mask()
        out.append(({**cell, "method": "tracking"}, _db(x, ls.decode_lossy(stream, system))))
        out.append(({**cell, "method": "dpcm"}, _db(x, bl.dpcm_decode(didx, dp, mask))))
        out.append(({**cell, "method": "fsq"}, _db(x, bl.fsq_decode(fidx, fs, mask)[0])))
    return out


def _scalable_job(cfg, seed, a):
    model = cfg.model(a)
    tx, x, _, g = _data(cfg, model, seed, a)
    base = tr.train_system(model, cfg.r12, cfg.T, em_rounds=cfg.em_rounds, seed=g, obs=tx)
    bst = tr.run_encoder(x, base)
    out = [(dict(experiment="scalable", a=a, rate=cfg.r12, method="tracking_base"),
            _db(x, bst.reconstruction))]
    for r2 in cfg.r2:
        cell = dict(experiment="scalable", a=a, rate=cfg.r12, r2=r2)
        system = sc.ScalableSystem(base, r2, 0, cfg.enh_iters)
        erec = sc._enh(x, sc.NO_INDICES, bst.cells, system, 0)[1]
        dp = bl.scalable_dpcm_train(tx, cfg.r12, r2)
        out.append(({**cell, "method": "scalable_tracking"}, _db(x, erec)))
        out.append(({**cell, "method": "scalable_dpcm"}, _db(x, bl.scalable_dpcm_run(x, dp)[3])))
        out.append(({**cell, "method": "bound_switched"},
                    10 * math.log10(bl.bound_switched(model, cfg.r12 + r2, cfg.bound_restarts, seed))))
    return out


def _delayed_job(cfg, seed, a):
    model = cfg.model(a)
    tx, x, _, g = _data(cfg, model, seed, a)
    base = tr.train_system(model, cfg.r12, cfg.T, em_rounds=cfg.em_rounds, seed=g, obs=tx)
    bst = tr.run_encoder(x, base)
    out = []
    for r2 in cfg.r2:
        for L in sorted({0, cfg.L, *cfg.L_extra}):
            system = sc.ScalableSystem(base, r2, L, cfg.delayed_enh_iters, enh_lloyd_tol=cfg.delayed_enh_tol)
            erec = sc._enh(x, sc.NO_INDICES, bst.cells, system, L)[1]
            method = "scalable_tracking" if L == 0 else "scalable_delayed"
            out.append((dict(experiment="delayed", a=a, rate=cfg.r12, r2=r2, L=L, method=method),
                        _db(x, erec)))
    return out


def _bounds_job(cfg, seed, a):
    model = cfg.model(a) if cfg.model_path is None else cfg.model()
    _, x, _, _ = _data(cfg, model, seed, a)
    out = []
    for R in cfg.rates:
        cell = dict(experiment="bounds", a=a, rate=R)
        out.append(({**cell, "method": "bound_switched"},
                    10 * math.log10(bl.bound_switched(model, R, cfg.bound_restarts, seed))))
        out.append(({**cell, "method": "bound_clean"}, 10 * math.log10(bl.bound_clean_history(model, R, x))))
    return out


def _rd_entry(cfg, seed, a):
    return _rd_job(cfg, seed, a, cfg.model() if cfg.model_path else cfg.model(a))


JOBS = {"rd": _rd_entry, "trans": _trans_job, "loss": _loss_job, "scalable": _scalable_job,
        "delayed": _delayed_job, "bounds": _bounds_job}


def _timed(name, cfg, seed, a):
    t0 = time.perf_counter()
    res = JOBS[name](cfg, seed, a)
    return res, (name, seed, a, 1000 * (time.perf_counter() - t0))


def _run(name, cfg, a_values, timings=None):
    tasks = [(name, cfg, s, a) for a in a_values for s in cfg.seeds]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(_timed, *zip(*tasks)))
    else:
        results = [_timed(*t) for t in tasks]
    per = defaultdict(list)
    for (res, timing), (_, _, seed, _) in zip(results, tasks):
        if timings is not None:
            timings.append(timing)
        for k, d in res:
            per[tuple(sorted(k.items()))].append((seed, d))
    rows = []
    for k, vals in per.items():
        d = np.array([v for _, v in vals])
        se = float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0
        rows.append(ResultRow(**dict(k), distortion_db=float(d.mean()), std_err=se,
                              n_seeds=d.size, seed=min(s for s, _ in vals)))
    return sorted(rows, key=ResultRow.key)


def run_rd_sweep(cfg: ExperimentConfig, timings=None):
    return _run("rd", cfg, [cfg.switch], timings)


def run_transition_sweep(cfg: ExperimentConfig, timings=None):
    return _run("trans", cfg, cfg.a_grid, timings)


def run_loss_sweep(cfg: ExperimentConfig, timings=None):
    return _run("loss", cfg, cfg.loss_a, timings)


def run_scalable_sweep(cfg: ExperimentConfig, timings=None):
    return _run("scalable", cfg, [cfg.switch], timings)


def run_delayed_sweep(cfg: ExperimentConfig, timings=None):
    if cfg.L < 1:
        raise ConfigError("L", "delayed sweep needs L >= 1")
    return _run("delayed", cfg, [cfg.switch], timings)


def run_bounds(cfg: ExperimentConfig, timings=None):
    return _run("bounds", cfg, [cfg.switch], timings)


# --- summaries --------------------------------------------------------------

def lookup(rows, **kw) -> ResultRow:
    hits = [r for r in rows if all(getattr(r, k) == v for k, v in kw.items())]
    if len(hits) != 1:
        raise KeyError(f"{len(hits)} rows match {kw}")
    return hits[0]


def gains(rows, method="tracking", against=("dpcm", "fsq"), by=("a", "rate", "r2", "L", "loss_rate")):
    """Gain in dB of ``method`` over the best of ``against`` for every grid cell."""
    cells = defaultdict(dict)
    for r in rows:
        cells[tuple(getattr(r, b) for b in by)][r.method] = r.distortion_db
    out = {}
    for k, m in sorted(cells.items()):
        if method in m and any(b in m for b in against):
            out[k] = min(m[b] for b in against if b in m) - m[method]
    return out


def check_bounds(rows) -> list:
    """Grid cells where a codec beats a bound of the same cell (should be empty)."""
    bad = []
    by_cell = defaultdict(list)
    for r in rows:
        by_cell[(r.experiment, r.a, r.rate, r.r2, r.L, r.loss_rate)].append(r)
    for cell, rs in by_cell.items():
        bounds = [r for r in rs if r.method.startswith("bound") and not (r.r2 or r.L)]
        codecs = [r for r in rs if not r.method.startswith("bound") and r.loss_rate == 0 and not r.r2]
        for b in bounds:
            bad += [(c, b) for c in codecs if c.distortion_db < b.distortion_db]
    return bad


# --- output -----------------------------------------------------------------

def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in sorted(rows, key=ResultRow.key):
        w.writerow([repr(v) if isinstance(v, float) else v for v in dataclasses.astuple(r)])
    return buf.getvalue()


def read_csv(path) -> list:
    types = {f.name: f.type for f in dataclasses.fields(ResultRow)}
    conv = {"str": str, "int": int, "float": float}
    with open(path) as f:
        return [ResultRow(**{k: conv[types[k]](v) for k, v in rec.items()}) for rec in csv.DictReader(f)]


def write_results(rows, path, timings=None, meta=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows))
    info = {"note": DB_NOTE, "loss": LOSS_RATE_NOTE, **(meta or {})}
    path.with_suffix(".meta.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    if timings is not None:
        with open(path.with_suffix(".timing.csv"), "w") as f:
            f.write("experiment,seed,a,runtime_ms\n")
            for name, seed, a, ms in timings:
                f.write(f"{name},{seed},{a!r},{ms:.1f}\n")


def write_plot_data(rows, out_dir, x_field="rate") -> list:
    """One whitespace-separated ``x y stderr`` file per (experiment, method, series)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series = defaultdict(list)
    for r in rows:
        tag = [r.experiment, r.method]
        if x_field != "rate":
            tag.append(f"R{r.rate}")
        if r.experiment in ("loss",):
            tag.append(f"a{r.a:g}")
        if r.L:
            tag.append(f"L{r.L}")
        series["_".join(tag)].append((getattr(r, x_field), r.distortion_db, r.std_err))
    files = []
    for name, pts in sorted(series.items()):
        p = out_dir / f"{name}.dat"
        p.write_text(f"# {x_field} distortion_db std_err\n"
                     + "".join(f"{x!r} {y!r} {s!r}\n" for x, y, s in sorted(pts)))
        files.append(p)
    return files
