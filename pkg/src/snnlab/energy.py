"""Hardware-agnostic and hardware-aware inference energy estimators.

Three hardware-aware estimators share one cost table:

* SNN on a neuromorphic dataflow architecture (NDA): neuron state, leak and
  weights are local; spikes travel ``n_hop`` routers.
* CNN and SNN on a classical architecture (CA): weights stream from external
  memory, activations and neuron state live in internal memory. The memory
  external ratio ``mer = e_int / e_ext`` sets the external access cost.

The agnostic estimator counts equivalent MACs (EMAC): CNN MACs are data
independent, SNN accumulates are charged ``e_ac / e_mac`` of a MAC per input
event.

All energies are per inference of a single image.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .network import SparsityProfile


class SparsityDomainError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyCostTable:
    """Energy per event. Defaults are artifact choices, not measured values."""
    e_add: float = 0.9
    e_mul: float = 3.7
    e_sub: float = 0.9
    e_cmp: float = 0.9
    e_r_weight: float = 5.0
    e_r_state: float = 5.0
    e_r_leak: float = 5.0
    e_w_state: float = 5.0
    e_tphop: float = 3.0
    e_mem_int: float = 5.0
    e_mem_ext: float = 500.0
    e_mac: float = 4.6
    e_ac: float = 0.9

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{f.name} must be a finite non-negative energy, got {v}")

    def scaled(self, factor: float) -> "EnergyCostTable":
        return EnergyCostTable(**{k: v * factor for k, v in asdict(self).items()})

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "EnergyCostTable":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown cost fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    @classmethod
    def load(cls, path=None) -> "EnergyCostTable":
        """Load a JSON table; ``None`` loads the packaged defaults."""
        if path is None:
            text = resources.files(__package__).joinpath("costs.default.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_json(json.loads(text))


@dataclass(frozen=True)
class HardwareModel:
    """``kind`` is ``"ca"`` (uses ``mer``) or ``"nda"`` (uses ``n_hop``)."""
    kind: str
    costs: EnergyCostTable = field(default_factory=EnergyCostTable)
    mer: float | None = None
    n_hop: int = 1
    leak_enabled: bool = True
    fanout_movement: bool = False

    def __post_init__(self):
        if self.kind not in ("ca", "nda"):
            raise ValueError(f"unknown hardware kind {self.kind!r}")
        if self.kind == "ca":
            mer = self.mer
            if mer is None:
                if self.costs.e_mem_ext <= 0:
                    raise ValueError("mer unset and e_mem_ext is zero")
                mer = self.costs.e_mem_int / self.costs.e_mem_ext
                object.__setattr__(self, "mer", mer)
            if not 0.0 < mer <= 1.0:
                raise ValueError(f"mer must lie in (0, 1], got {mer}")
        if self.n_hop < 1:
            raise ValueError(f"n_hop must be >= 1, got {self.n_hop}")

    @classmethod
    def ca(cls, costs: EnergyCostTable, mer: float | None = None, **kw) -> "HardwareModel":
        return cls("ca", costs, mer=mer, **kw)

    @classmethod
    def nda(cls, costs: EnergyCostTable, n_hop: int = 1, **kw) -> "HardwareModel":
        return cls("nda", costs, n_hop=n_hop, **kw)

    @property
    def e_ext(self) -> float:
        """External (weight) access energy implied by the memory external ratio."""
        return self.costs.e_mem_int / self.mer

    def to_json(self) -> dict:
        d = asdict(self)
        d["costs"] = self.costs.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "HardwareModel":
        d = dict(d)
        d["costs"] = EnergyCostTable.from_json(d.get("costs", {}))
        return cls(**d)


@dataclass
class EnergyBreakdown:
    per_layer: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.per_layer))


def _rates(values, T: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(values, dtype=np.float64), (T,)) if np.ndim(values) == 0 \
        else np.asarray(values, dtype=np.float64)
    if arr.shape != (T,):
        raise ValueError(f"{name} must have length T={T}, got shape {arr.shape}")
    if np.any(arr < 0.0) or np.any(arr > 1.0) or not np.all(np.isfinite(arr)):
        raise SparsityDomainError(f"{name} values must lie in [0, 1]")
    return arr


def _neuron_fixed(costs: EnergyCostTable, leak_enabled: bool) -> float:
    """Per-neuron per-step cost independent of spiking activity."""
    e = costs.e_r_state + costs.e_add + costs.e_cmp + costs.e_w_state
    if leak_enabled:
        e += costs.e_r_leak + costs.e_mul
    return e


def energy_lif_nda(n_src: int, T: int, s_in, s_out, n_hop: int, costs: EnergyCostTable,
                   *, leak_enabled: bool = True, n_move: float | None = None,
                   analog_input: bool = False) -> float:
    """Energy of one LIF neuron on a neuromorphic dataflow architecture.

    Per step: weight reads and additions for each input event, state read,
    add and compare, leak read and multiply, subtraction on firing, state
    write, and ``n_move * n_hop`` router hops per output spike, where
    ``n_move`` defaults to the fan-in ``n_src``. ``s_in``/``s_out`` are
    per-step sparsities (scalars broadcast over the window). With
    ``analog_input`` each input event costs a multiply as well.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    s_in = _rates(s_in, T, "s_in")
    s_out = _rates(s_out, T, "s_out")
    n_move = n_src if n_move is None else n_move
    synapse = costs.e_r_weight + costs.e_add + (costs.e_mul if analog_input else 0.0)
    per_step = (n_src * (1.0 - s_in) * synapse
                + _neuron_fixed(costs, leak_enabled)
                + (1.0 - s_out) * costs.e_sub
                + n_move * (1.0 - s_out) * n_hop * costs.e_tphop)
    return float(np.sum(per_step))


def _fanout(profile: SparsityProfile) -> np.ndarray:
    nc = profile.neuron_count.astype(np.float64)
    out = np.zeros(profile.n_layers)
    out[:-1] = profile.n_src[1:] * nc[1:] / nc[:-1]
    return out


def _check_profile(profile: SparsityProfile | None):
    if profile is None:
        raise ValueError("missing sparsity profile")
    if profile.s_in.shape != profile.s_out.shape or profile.s_in.ndim != 2:
        raise ValueError("profile s_in/s_out must both be [layers, T]")
    if len(profile.neuron_count) != profile.n_layers:
        raise ValueError("profile is missing per-layer neuron counts")


def energy_snn_nda(profile: SparsityProfile, hw: HardwareModel, shapes=None) -> EnergyBreakdown:
    """Sum of the per-neuron NDA energy over every neuron of every layer."""
    _check_profile(profile)
    if hw.kind != "nda":
        raise ValueError("energy_snn_nda needs an NDA hardware model")
    T = profile.t_window
    fanout = _fanout(profile) if hw.fanout_movement else None
    per_layer = np.zeros(profile.n_layers)
    for p in range(profile.n_layers):
        e = energy_lif_nda(int(profile.n_src[p]), T, profile.s_in[p], profile.s_out[p],
                           hw.n_hop, hw.costs, leak_enabled=hw.leak_enabled,
                           n_move=None if fanout is None else fanout[p],
                           analog_input=bool(profile.analog_input[p]))
        per_layer[p] = profile.neuron_count[p] * e
    return EnergyBreakdown(per_layer)


def energy_cnn_ca(op_counts, shapes, hw: HardwareModel) -> EnergyBreakdown:
    """Data-independent CNN energy on a classical architecture.

    Every MAC costs a multiply and an add and reads one activation from
    internal memory; every weight is streamed once from external memory;
    every output is written once to internal memory.
    """
    if hw.kind != "ca":
        raise ValueError("energy_cnn_ca needs a CA hardware model")
    c = hw.costs
    per_layer = np.zeros(len(shapes))
    for p, (macs, s) in enumerate(zip(op_counts, shapes)):
        per_layer[p] = (macs * (c.e_mul + c.e_add)
                        + s.param_count * hw.e_ext
                        + s.neuron_count * s.n_src * c.e_mem_int
                        + s.neuron_count * c.e_mem_int)
    return EnergyBreakdown(per_layer)


def energy_snn_ca(profile: SparsityProfile, hw: HardwareModel, shapes=None) -> EnergyBreakdown:
    """SNN energy on a classical architecture.

    Nothing stays resident between steps: each input event re-reads its
    weight from external memory, and every neuron reads and writes its state
    in internal memory at every step.
    """
    _check_profile(profile)
    if hw.kind != "ca":
        raise ValueError("energy_snn_ca needs a CA hardware model")
    c = hw.costs
    update = 2.0 * c.e_mem_int + c.e_add + c.e_cmp + (c.e_mul if hw.leak_enabled else 0.0)
    per_layer = np.zeros(profile.n_layers)
    for p in range(profile.n_layers):
        s_in = _rates(profile.s_in[p], profile.t_window, "s_in")
        s_out = _rates(profile.s_out[p], profile.t_window, "s_out")
        synapse = c.e_add + hw.e_ext + (c.e_mul if profile.analog_input[p] else 0.0)
        nc, ns = profile.neuron_count[p], profile.n_src[p]
        per_step = nc * ns * (1.0 - s_in) * synapse + nc * (update + (1.0 - s_out) * c.e_sub)
        per_layer[p] = float(np.sum(per_step))
    return EnergyBreakdown(per_layer)


def emac_estimate(source, mode: str, costs: EnergyCostTable, r_update: float | None = None) -> float:
    """Equivalent-MAC count.

    ``mode="cnn"``: ``source`` is the per-layer MAC list; returns its sum.
    ``mode="snn"``: ``source`` is a SparsityProfile; each input event costs
    ``e_ac / e_mac`` MAC (1 for the analog first layer) and each neuron update
    ``r_update`` MAC (default ``e_ac / e_mac``) per step.
    """
    if mode == "cnn":
        return float(sum(source))
    if mode != "snn":
        raise ValueError(f"mode must be 'cnn' or 'snn', got {mode!r}")
    profile = source
    _check_profile(profile)
    r_ac = costs.e_ac / costs.e_mac if costs.e_mac > 0 else 0.0
    if r_update is None:
        r_update = r_ac
    total = 0.0
    for p in range(profile.n_layers):
        r = 1.0 if profile.analog_input[p] else r_ac
        nc, ns = profile.neuron_count[p], profile.n_src[p]
        total += float(np.sum(nc * ns * (1.0 - profile.s_in[p]) * r + nc * r_update))
    return total


# --------------------------------------------------------------------------
# reports

def mer_label(mer: float) -> str:
    return f"mer{1.0 / mer:g}"


@dataclass
class ReportRow:
    rho: float
    emac_cnn: float
    emac_snn: float
    cnn_ca: list
    snn_ca: list
    snn_nda: float

    def aware(self) -> list:
        out = []
        for c, s in zip(self.cnn_ca, self.snn_ca):
            out += [c, s]
        return out + [self.snn_nda]


@dataclass
class EnergyReport:
    """Table of per-bucket energies; ``cnn_ca``/``snn_ca`` follow ``mers``."""
    mers: list
    rows: list
    normalized: bool = False

    def columns(self) -> list[str]:
        cols = ["rho", "emac_cnn", "emac_snn"]
        for m in self.mers:
            cols += [f"cnn_ca_{mer_label(m)}", f"snn_ca_{mer_label(m)}"]
        return cols + ["snn_nda"]

    def table(self) -> np.ndarray:
        return np.array([[r.rho, r.emac_cnn, r.emac_snn] + r.aware() for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns())
        for row in self.table():
            writer.writerow([f"{v:.9g}" for v in row])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"mers": list(self.mers), "normalized": self.normalized,
                "columns": self.columns(), "rows": self.table().tolist()}


def normalize_report(raw: EnergyReport) -> EnergyReport:
    """EMAC pair divided row-wise by the CNN count; hardware-aware block by its global maximum."""
    if not raw.rows:
        raise ValueError("cannot normalize an empty report")
    peak = max(max(r.aware()) for r in raw.rows)
    if peak <= 0:
        peak = 1.0
    rows = []
    for r in raw.rows:
        base = r.emac_cnn if r.emac_cnn > 0 else 1.0
        rows.append(ReportRow(
            rho=r.rho,
            emac_cnn=r.emac_cnn / base,
            emac_snn=r.emac_snn / base,
            cnn_ca=[v / peak for v in r.cnn_ca],
            snn_ca=[v / peak for v in r.snn_ca],
            snn_nda=r.snn_nda / peak))
    return replace(raw, rows=rows, normalized=True)
