"""Dark-pixel-ratio sweep: per-bucket energy comparison of the SNN/CNN pair."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .energy import (EnergyCostTable, EnergyReport, HardwareModel, ReportRow, emac_estimate,
                     energy_cnn_ca, energy_snn_ca, energy_snn_nda, normalize_report)
from .network import (Model, SparsityProfile, cnn_run, layer_shapes, op_counts,
                      profiles_from_trace, snn_run)

DEFAULT_MERS = (0.01, 0.02, 1.0)


def bucket_indices(rho_target, rho_actual) -> list[np.ndarray]:
    """Group items by target ratio, ordered by ascending mean measured ratio."""
    keys = rho_target if rho_target is not None else np.round(rho_actual, 2)
    groups = defaultdict(list)
    for i, k in enumerate(keys):
        groups[float(k)].append(i)
    buckets = [np.array(v) for v in groups.values()]
    return sorted(buckets, key=lambda idx: (float(np.mean(rho_actual[idx])), idx[0]))


def bucket_profile(snn: Model, images, batch_size: int = 64) -> SparsityProfile:
    """Mean sparsity profile of ``snn`` over ``images``."""
    profiles = []
    for start in range(0, len(images), batch_size):
        _, trace = snn_run(snn, images[start:start + batch_size])
        profiles += profiles_from_trace(snn, trace)
    return SparsityProfile.mean(profiles)


def energy_row(rho: float, profile: SparsityProfile, cnn_ops, shapes, costs: EnergyCostTable,
               mers, n_hop: int = 1, **hw_flags) -> ReportRow:
    cnn_ca, snn_ca = [], []
    for mer in mers:
        hw = HardwareModel.ca(costs, mer, **hw_flags)
        cnn_ca.append(energy_cnn_ca(cnn_ops, shapes, hw).total)
        snn_ca.append(energy_snn_ca(profile, hw, shapes).total)
    nda = energy_snn_nda(profile, HardwareModel.nda(costs, n_hop, **hw_flags), shapes).total
    return ReportRow(rho=float(rho),
                     emac_cnn=emac_estimate(cnn_ops, "cnn", costs),
                     emac_snn=emac_estimate(profile, "snn", costs),
                     cnn_ca=cnn_ca, snn_ca=snn_ca, snn_nda=nda)


def sweep_report(snn: Model, cnn: Model, dataset, costs: EnergyCostTable,
                 mers=DEFAULT_MERS, n_hop: int = 1, **hw_flags):
    """Raw report with one row per rho bucket plus the averaged profiles."""
    if snn.spec.layers != cnn.spec.layers or snn.spec.input_shape != cnn.spec.input_shape:
        raise ValueError("SNN and CNN geometries differ")
    shapes = layer_shapes(cnn.spec)
    ops = op_counts(cnn.spec)
    rows, profiles = [], []
    for idx in bucket_indices(dataset.rho_target, dataset.rho):
        images = dataset.images[idx]
        cnn_run(cnn, images)  # shape and finiteness check; op counts are data independent
        profile = bucket_profile(snn, images)
        rows.append(energy_row(float(np.mean(dataset.rho[idx])), profile, ops, shapes,
                               costs, mers, n_hop, **hw_flags))
        profiles.append(profile)
    return EnergyReport(list(mers), rows), profiles


def report_is_finite(report: EnergyReport) -> bool:
    return bool(np.all(np.isfinite(report.table())))


__all__ = ["DEFAULT_MERS", "bucket_indices", "bucket_profile", "energy_row", "sweep_report",
           "normalize_report", "report_is_finite"]
