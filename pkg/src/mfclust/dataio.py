"""File formats: long-CSV datasets, JSON model bundles, CSV results.

The dataset format is one row per (observation, sensor, time) sample with
header obs_id,sensor_id,time,value; every curve must cover the same time
grid. Fitted models are stored as a single JSON document with a schema
version; floats survive the round trip exactly because Python serializes
them with shortest-repr precision.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from mfclust.basis import BasisSpec, build_basis
from mfclust.em import FitResult, MixtureParams
from mfclust.fpca import CoefficientMatrix, FunctionalDataSet, SensorFpcaModel
from mfclust.select import SelectionReport, SelectionRow
from mfclust.simbench import BenchmarkRow, ReplicateRecord, SimulationDesign

SCHEMA_VERSION = 1


class DataFormatError(ValueError):
    """A file failed structural validation."""


# ---------------------------------------------------------------------------
# long CSV datasets

_HEADER = ["obs_id", "sensor_id", "time", "value"]


def write_long_csv(data: FunctionalDataSet, path) -> None:
    obs_ids = data.obs_ids or [str(i) for i in range(data.n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        for i, obs in enumerate(obs_ids):
            for s, sensor in enumerate(data.sensor_names):
                for t, value in zip(data.times, data.values[i, s, :]):
                    writer.writerow([obs, sensor, repr(float(t)), repr(float(value))])


def read_long_csv(path) -> FunctionalDataSet:
    """Assemble a dataset from long rows, insisting on a rectangular grid."""
    cells: dict[tuple[str, str], dict[float, float]] = {}
    obs_seen: dict[str, None] = {}
    sensor_seen: dict[str, None] = {}
    times_seen: set[float] = set()

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _HEADER:
            raise DataFormatError(f"expected header {','.join(_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
            obs, sensor, time_s, value_s = row
            try:
                t = float(time_s)
                v = float(value_s)
            except ValueError:
                raise DataFormatError(
                    f"line {lineno}: non-numeric time or value ({time_s!r}, {value_s!r})"
                ) from None
            obs_seen[obs] = None
            sensor_seen[sensor] = None
            series = cells.setdefault((obs, sensor), {})
            if t in series:
                raise DataFormatError(f"duplicate sample for ({obs}, {sensor}, {t})")
            series[t] = v
            times_seen.add(t)

    if not cells:
        raise DataFormatError("no data rows")
    obs_order = list(obs_seen)
    sensor_order = list(sensor_seen)
    times = sorted(times_seen)

    missing = []
    for obs in obs_order:
        for sensor in sensor_order:
            have = cells.get((obs, sensor), {})
            for t in times:
                if t not in have:
                    missing.append((obs, sensor, t))
                    if len(missing) >= 10:
                        break
            if len(missing) >= 10:
                break
        if len(missing) >= 10:
            break
    if missing:
        listing = ", ".join(f"({o}, {s}, {t:g})" for o, s, t in missing)
        raise DataFormatError(f"incomplete grid; first missing cells: {listing}")

    values = np.empty((len(obs_order), len(sensor_order), len(times)))
    for i, obs in enumerate(obs_order):
        for s, sensor in enumerate(sensor_order):
            series = cells[(obs, sensor)]
            values[i, s, :] = [series[t] for t in times]
    return FunctionalDataSet(
        times=np.asarray(times),
        values=values,
        sensor_names=sensor_order,
        obs_ids=obs_order,
    )


# ---------------------------------------------------------------------------
# score matrices


def write_scores_csv(B: CoefficientMatrix, path, obs_ids: list[str] | None = None) -> None:
    obs_ids = obs_ids or [str(i) for i in range(B.n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["obs_id"] + [
            f"{name}_pc{l + 1}" for name in B.sensor_names for l in range(B.q_c)
        ]
        writer.writerow(header)
        for obs, row in zip(obs_ids, B.scores):
            writer.writerow([obs] + [repr(float(x)) for x in row])


def read_scores_csv(path) -> tuple[CoefficientMatrix, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "obs_id":
            raise DataFormatError("scores file must start with an obs_id column")
        names, comps = [], []
        for col in header[1:]:
            name, _, pc = col.rpartition("_pc")
            if not name or not pc.isdigit():
                raise DataFormatError(f"bad score column name {col!r}")
            names.append(name)
            comps.append(int(pc))
        if not names:
            raise DataFormatError("scores file has no score columns")
        q_c = max(comps)
        sensor_names = list(dict.fromkeys(names))
        expected = [f"{n}_pc{l + 1}" for n in sensor_names for l in range(q_c)]
        if header[1:] != expected:
            raise DataFormatError("score columns must be sensor-major, component-minor")
        obs_ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            obs_ids.append(row[0])
            try:
                rows.append([float(x) for x in row[1:]])
            except ValueError:
                raise DataFormatError(f"line {lineno}: non-numeric score") from None
    scores = np.asarray(rows)
    return CoefficientMatrix(scores=scores, q_c=q_c, sensor_names=sensor_names), obs_ids


# ---------------------------------------------------------------------------
# model bundles


@dataclass
class ModelBundle:
    """Everything needed to reapply a fitted pipeline."""

    fpca_models: list[SensorFpcaModel] | None = None
    q_c: int | None = None
    mixture: MixtureParams | None = None
    selection_rows: list[SelectionRow] | None = None
    chosen: tuple[int, float, float, str] | None = None
    removed_sensors: list[str] | None = None

    @classmethod
    def from_report(cls, report: SelectionReport, fpca_models=None, q_c=None) -> "ModelBundle":
        return cls(
            fpca_models=fpca_models,
            q_c=q_c,
            mixture=report.best_fit.params if report.best_fit else None,
            selection_rows=report.rows,
            chosen=report.chosen,
            removed_sensors=sorted(report.best_fit.removed_sensors) if report.best_fit else None,
        )


def _basis_to_json(basis: BasisSpec) -> dict:
    return {
        "domain_lo": basis.domain_lo,
        "domain_hi": basis.domain_hi,
        "order": basis.order,
        "n_basis": basis.n_basis,
    }


def _sensor_model_to_json(model: SensorFpcaModel) -> dict:
    return {
        "sensor": model.sensor,
        "basis": _basis_to_json(model.basis),
        "times": model.times.tolist(),
        "mean_coeffs": model.mean_coeffs.tolist(),
        "eigen_coeffs": model.eigen_coeffs.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
        "variance_explained": model.variance_explained.tolist(),
        "standardization": list(model.standardization),
    }


def _sensor_model_from_json(obj: dict) -> SensorFpcaModel:
    b = obj["basis"]
    return SensorFpcaModel(
        sensor=obj["sensor"],
        basis=build_basis(b["domain_lo"], b["domain_hi"], b["n_basis"], b["order"]),
        times=np.asarray(obj["times"]),
        mean_coeffs=np.asarray(obj["mean_coeffs"]),
        eigen_coeffs=np.asarray(obj["eigen_coeffs"]),
        eigenvalues=np.asarray(obj["eigenvalues"]),
        variance_explained=np.asarray(obj["variance_explained"]),
        standardization=tuple(obj["standardization"]),
    )


def write_model(bundle: ModelBundle, path) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "fpca": None, "mixture": None,
           "selection_table": None, "chosen": None, "removed_sensors": bundle.removed_sensors}
    if bundle.fpca_models is not None:
        doc["fpca"] = {
            "q_c": bundle.q_c if bundle.q_c is not None else bundle.fpca_models[0].q_c,
            "sensors": [_sensor_model_to_json(m) for m in bundle.fpca_models],
        }
    if bundle.mixture is not None:
        doc["mixture"] = {
            "m": bundle.mixture.m,
            "proportions": bundle.mixture.proportions.tolist(),
            "means": bundle.mixture.means.tolist(),
            "variances": bundle.mixture.variances.tolist(),
            "zero_mask": bundle.mixture.zero_mask.tolist(),
        }
    if bundle.selection_rows is not None:
        doc["selection_table"] = [asdict(r) for r in bundle.selection_rows]
    if bundle.chosen is not None:
        m, lam, gamma, kind = bundle.chosen
        doc["chosen"] = {"m": m, "lam": lam, "gamma": gamma, "kind": kind}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def read_model(path) -> ModelBundle:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"corrupted model file: {exc}") from None
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataFormatError(
            f"model schema version {version!r} not supported (expected {SCHEMA_VERSION})"
        )
    bundle = ModelBundle(removed_sensors=doc.get("removed_sensors"))
    if doc.get("fpca") is not None:
        bundle.q_c = doc["fpca"]["q_c"]
        bundle.fpca_models = [_sensor_model_from_json(o) for o in doc["fpca"]["sensors"]]
    if doc.get("mixture") is not None:
        mx = doc["mixture"]
        means = np.asarray(mx["means"])
        bundle.mixture = MixtureParams(
            proportions=np.asarray(mx["proportions"]),
            means=means,
            variances=np.asarray(mx["variances"]),
            zero_mask=np.asarray(mx["zero_mask"], dtype=bool),
        )
    if doc.get("selection_table") is not None:
        bundle.selection_rows = [SelectionRow(**r) for r in doc["selection_table"]]
    if doc.get("chosen") is not None:
        ch = doc["chosen"]
        bundle.chosen = (ch["m"], ch["lam"], ch["gamma"], ch["kind"])
    return bundle


# ---------------------------------------------------------------------------
# assignments and benchmark results


def write_assignments(fit: FitResult, path, obs_ids: list[str] | None = None) -> None:
    """CSV of hard labels plus one responsibility column per cluster."""
    n, m = fit.responsibilities.shape
    obs_ids = obs_ids or [str(i) for i in range(n)]
    if len(obs_ids) != n:
        raise ValueError("obs_ids length must match the fitted observations")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["obs_id", "label"] + [f"resp_{k + 1}" for k in range(m)])
        for obs, label, resp in zip(obs_ids, fit.hard_labels, fit.responsibilities):
            writer.writerow([obs, int(label)] + [repr(float(r)) for r in resp])


def read_assignments(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["obs_id", "label"]:
            raise DataFormatError("assignments file must start with obs_id,label")
        obs_ids, labels, resps = [], [], []
        for row in reader:
            if not row:
                continue
            obs_ids.append(row[0])
            labels.append(int(row[1]))
            resps.append([float(x) for x in row[2:]])
    return obs_ids, np.asarray(labels), np.asarray(resps)


def write_benchmark_rows(rows: list[BenchmarkRow], path) -> None:
    fields = list(BenchmarkRow.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([getattr(row, f) for f in fields])
            fh.flush()


def write_replicate_records(records: list[ReplicateRecord], path) -> None:
    fields = list(ReplicateRecord.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for rec in records:
            writer.writerow([getattr(rec, f) for f in fields])
            fh.flush()


def write_cluster_means(
    models: list[SensorFpcaModel], mixture: MixtureParams, q_c: int, path
) -> None:
    """Tidy CSV of per-cluster mean curves, one row per (sensor, cluster, time).

    Cluster k's mean curve for a sensor is the sensor mean function plus
    the component functions weighted by that cluster's score means, in the
    sensor's standardized units.
    """
    from mfclust.basis import design_matrix

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sensor_id", "cluster", "time", "value"])
        for s, model in enumerate(models):
            dm = design_matrix(model.basis, model.times)
            for k in range(mixture.m):
                block = mixture.means[k, s * q_c : (s + 1) * q_c]
                curve = dm @ (model.mean_coeffs + model.eigen_coeffs @ block)
                for t, v in zip(model.times, curve):
                    writer.writerow([model.sensor, k, repr(float(t)), repr(float(v))])


def write_truth(design: SimulationDesign, data: FunctionalDataSet, path) -> None:
    """Companion file for simulated datasets: labels and the sensor split."""
    doc = {
        "labels": data.labels.tolist(),
        "obs_ids": data.obs_ids or [str(i) for i in range(data.n)],
        "signal_sensors": design.signal_sensor_names,
        "noise_sensors": design.noise_sensor_names,
        "design": {
            "n": design.n,
            "p_signal": design.p_signal,
            "p_noise": design.p_noise,
            "delta": design.delta,
            "m_true": design.m_true,
            "proportions": list(design.proportions),
            "n_basis": design.n_basis,
            "order": design.order,
            "domain": list(design.domain),
            "n_times": design.n_times,
            "seed": design.seed,
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
