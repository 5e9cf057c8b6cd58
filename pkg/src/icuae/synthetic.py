"""Synthetic ICU cohort generator.

Stands in for the restricted source database: emits events/stays CSVs in
the pipeline's input schema. Each patient follows a latent mean-reverting
acuity walk and a smooth stress stream that every channel tracks through
its own response filter (vitals within hours, labs over a day), scaled by
a patient-level response speed. On top of that the 30 channels carry a
patient baseline offset, channel-local wander, and two rhythmic cycles
whose period and phase vary by patient and whose lag varies by channel.
Observation density, value noise, and in-hospital mortality all derive
from per-patient substreams, so any patient's data is reproducible in
isolation and cohorts are byte-identical across reruns.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError
from .pipeline import CARE_UNITS, NUM_FEATURES, StayMeta, read_schema_csv

STAY_ID_BASE = 100000

MIN_STAY_HOURS = 12.0
MAX_STAY_HOURS = 2000.0

CARE_UNIT_WEIGHTS = (0.32, 0.18, 0.16, 0.18, 0.16)

# Acuity process and mortality link. The intercept/slope put the cohort
# mortality rate near 12% for the default generator parameters. Step size
# and reversion are set so windows carry hour-scale dynamics: a dense
# model has to spend capacity on them while a recurrent one shares it.
ACUITY_REVERSION = 0.08
ACUITY_STEP_SD = 0.35
ACUITY_FRAILTY_SD = 0.6
MORTALITY_INTERCEPT = -2.2
MORTALITY_SLOPE = 1.4

# Channel-local mean-reverting wander on top of the shared acuity factor,
# in units of the channel's patient_sd. Without it every channel is a
# readout of one latent path and windows compress far below the model
# bottlenecks.
LOCAL_REVERSION = 0.15
LOCAL_SCALE = 0.3

# Shared stress stream and per-channel response filters. One smooth
# unit-variance stream per patient drives every channel through a
# first-order filter whose time constant is the channel's response_hours
# divided by a patient-level speed factor: in fast patients the labs
# track the vitals closely, in slow patients they drift a day behind.
# Because the mix of effective time constants varies continuously across
# patients, hour-by-channel windows do not factor into any fixed
# low-rank basis, while a recurrent decoder can realize the filters
# directly with its gates.
STRESS_TAU = 6.0
RESPONSE_SPEED_RANGE = (0.4, 2.5)
RESPONSE_BURN_HOURS = 256

# Rhythmic components: a circadian-like cycle and a faster autonomic one,
# each with a patient-specific period and phase. Channels respond with a
# fixed lag (blood pressure and temperature trail heart rate; labs trail
# further). Because the lag enters as a fraction of the patient's period,
# the per-channel weights rotate with the period and the trajectory family
# does not collapse into a low-rank hour-by-channel factorization.
CIRCADIAN_PERIOD_RANGE = (18.0, 30.0)
ULTRADIAN_PERIOD_RANGE = (5.0, 14.0)
ULTRADIAN_AMP_FACTOR = 0.8

COLLISION_RATE = 0.05  # chance of a second same-hour measurement


@dataclass(frozen=True)
class FeatureSpec:
    feature_id: int
    name: str
    unit: str
    baseline: float
    patient_sd: float  # per-patient constant offset scale
    gain: float  # acuity coupling, sign = clinical direction
    circadian_amp: float
    rhythm_lag: float  # hours behind heart rate within the daily cycle
    response_hours: float  # stress-tracking time constant at speed 1.0
    response_amp: float  # stress coupling, physical units
    noise_sd: float
    observed_rate: float  # per (hour, channel) observation probability
    low: float  # physical clamp for generated values
    high: float


FEATURES: Tuple[FeatureSpec, ...] = (
    FeatureSpec(0, "heart_rate", "bpm", 85.0, 10.0, 10.0, 10.0, 0.0, 3.0, 15.0, 2.0, 0.80, 30.0, 200.0),
    FeatureSpec(1, "systolic_bp", "mmHg", 120.0, 12.0, -10.0, 11.0, 2.5, 4.0, 18.0, 3.0, 0.70, 50.0, 220.0),
    FeatureSpec(2, "diastolic_bp", "mmHg", 65.0, 8.0, -5.0, 7.0, 3.0, 4.0, 12.0, 2.0, 0.70, 25.0, 130.0),
    FeatureSpec(3, "mean_bp", "mmHg", 82.0, 8.0, -7.0, 7.5, 2.7, 4.0, 12.0, 2.0, 0.70, 35.0, 160.0),
    FeatureSpec(4, "resp_rate", "breaths/min", 18.0, 3.0, 3.0, 3.1, 1.2, 2.5, 4.5, 1.0, 0.80, 5.0, 50.0),
    FeatureSpec(5, "spo2", "%", 97.0, 1.5, -1.6, 1.4, 4.0, 2.0, 2.2, 0.5, 0.80, 70.0, 100.0),
    FeatureSpec(6, "temperature", "degC", 37.0, 0.4, 0.3, 0.56, 3.5, 8.0, 0.6, 0.1, 0.45, 34.0, 41.5),
    FeatureSpec(7, "gcs_total", "score", 13.0, 2.0, -1.6, 0.94, 6.0, 10.0, 3.0, 0.5, 0.35, 3.0, 15.0),
    FeatureSpec(8, "urine_output", "mL/h", 80.0, 25.0, -14.0, 24.0, 8.0, 6.0, 38.0, 8.0, 0.50, 0.0, 300.0),
    FeatureSpec(9, "fio2", "fraction", 0.35, 0.08, 0.10, 0.037, 5.0, 5.0, 0.12, 0.02, 0.40, 0.21, 1.0),
    FeatureSpec(10, "glucose", "mg/dL", 130.0, 25.0, 14.0, 24.0, 10.0, 9.0, 38.0, 8.0, 0.30, 40.0, 500.0),
    FeatureSpec(11, "lactate", "mmol/L", 1.8, 0.6, 0.9, 0.41, 7.0, 8.0, 0.9, 0.2, 0.22, 0.3, 15.0),
    FeatureSpec(12, "arterial_ph", "pH", 7.38, 0.04, -0.036, 0.022, 2.0, 6.0, 0.06, 0.01, 0.25, 6.9, 7.7),
    FeatureSpec(13, "pao2", "mmHg", 95.0, 15.0, -8.0, 8.8, 1.6, 4.0, 22.0, 4.0, 0.25, 40.0, 300.0),
    FeatureSpec(14, "paco2", "mmHg", 40.0, 5.0, 2.4, 2.8, 2.2, 5.0, 7.5, 1.5, 0.25, 15.0, 90.0),
    FeatureSpec(15, "hco3", "mmol/L", 24.0, 2.5, -1.6, 1.4, 5.5, 12.0, 3.8, 0.6, 0.25, 8.0, 45.0),
    FeatureSpec(16, "potassium", "mmol/L", 4.1, 0.4, 0.2, 0.24, 6.5, 12.0, 0.6, 0.1, 0.25, 2.2, 7.5),
    FeatureSpec(17, "sodium", "mmol/L", 139.0, 3.0, 0.8, 1.6, 4.5, 16.0, 4.5, 0.8, 0.25, 115.0, 165.0),
    FeatureSpec(18, "chloride", "mmol/L", 103.0, 3.0, 0.8, 1.6, 4.8, 16.0, 4.5, 0.8, 0.25, 80.0, 130.0),
    FeatureSpec(19, "calcium", "mg/dL", 8.8, 0.5, -0.2, 0.28, 5.2, 14.0, 0.75, 0.12, 0.22, 5.5, 12.0),
    FeatureSpec(20, "magnesium", "mg/dL", 2.0, 0.2, 0.06, 0.11, 7.5, 18.0, 0.3, 0.05, 0.20, 0.8, 4.5),
    FeatureSpec(21, "phosphate", "mg/dL", 3.5, 0.6, 0.24, 0.34, 8.5, 18.0, 0.9, 0.15, 0.20, 0.8, 10.0),
    FeatureSpec(22, "creatinine", "mg/dL", 1.1, 0.4, 0.4, 0.22, 6.8, 20.0, 0.6, 0.08, 0.22, 0.2, 10.0),
    FeatureSpec(23, "bun", "mg/dL", 20.0, 7.0, 5.6, 3.8, 7.2, 24.0, 10.0, 1.2, 0.22, 3.0, 150.0),
    FeatureSpec(24, "wbc", "1e9/L", 9.0, 2.5, 2.0, 1.4, 9.0, 14.0, 3.8, 0.5, 0.22, 0.5, 40.0),
    FeatureSpec(25, "hemoglobin", "g/dL", 11.5, 1.5, -0.5, 0.8, 11.0, 25.0, 2.2, 0.2, 0.22, 4.0, 18.0),
    FeatureSpec(26, "hematocrit", "%", 34.0, 4.0, -1.4, 2.2, 11.2, 25.0, 6.0, 0.6, 0.22, 15.0, 55.0),
    FeatureSpec(27, "platelets", "1e9/L", 230.0, 60.0, -24.0, 31.0, 12.0, 30.0, 90.0, 10.0, 0.20, 10.0, 700.0),
    FeatureSpec(28, "bilirubin_total", "mg/dL", 0.9, 0.4, 0.44, 0.22, 9.5, 22.0, 0.6, 0.1, 0.20, 0.1, 20.0),
    FeatureSpec(29, "albumin", "g/dL", 3.4, 0.5, -0.28, 0.28, 10.5, 28.0, 0.75, 0.1, 0.20, 1.2, 5.5),
)

assert len(FEATURES) == NUM_FEATURES


def write_schema_csv(path) -> None:
    """30 lines of feature_id,name,unit (no header)."""
    with Path(path).open("w") as fh:
        for spec in FEATURES:
            fh.write(f"{spec.feature_id},{spec.name},{spec.unit}\n")


def feature_names() -> List[str]:
    return [spec.name for spec in FEATURES]


@dataclass
class PatientProfile:
    meta: StayMeta
    acuity: np.ndarray  # one value per stay hour
    baseline_offsets: np.ndarray  # per-channel constant shift
    circadian_period: float
    circadian_phase: float
    ultradian_period: float
    ultradian_phase: float
    response_speed: float  # scales every channel's stress-tracking rate
    observe_rates: np.ndarray  # per-channel, clipped to [0.2, 0.8]


def _patient_profile(seed: int, index: int) -> PatientProfile:
    """Stay-level draws; independent of how many events get generated."""
    rng = np.random.default_rng([seed, index, 0])
    age = rng.uniform(16.0, 90.0)
    care_unit = CARE_UNITS[rng.choice(len(CARE_UNITS), p=CARE_UNIT_WEIGHTS)]
    stay_hours = math.exp(rng.uniform(math.log(MIN_STAY_HOURS),
                                      math.log(MAX_STAY_HOURS)))
    hours = max(1, math.ceil(stay_hours))

    frailty = rng.normal(0.0, ACUITY_FRAILTY_SD)
    steps = rng.normal(0.0, ACUITY_STEP_SD, size=hours)
    acuity = np.empty(hours)
    acuity[0] = frailty + steps[0]
    for t in range(1, hours):
        acuity[t] = (acuity[t - 1]
                     + ACUITY_REVERSION * (frailty - acuity[t - 1]) + steps[t])

    p_death = 1.0 / (1.0 + math.exp(-(MORTALITY_INTERCEPT
                                      + MORTALITY_SLOPE * float(acuity.mean()))))
    mortality = bool(rng.random() < p_death)

    offsets = rng.normal(0.0, 1.0, size=NUM_FEATURES)
    offsets *= np.array([spec.patient_sd for spec in FEATURES])
    rates = np.array([spec.observed_rate for spec in FEATURES])
    rates = np.clip(rates + rng.normal(0.0, 0.05, size=NUM_FEATURES), 0.2, 0.8)

    speed_low, speed_high = RESPONSE_SPEED_RANGE
    speed = math.exp(rng.uniform(math.log(speed_low), math.log(speed_high)))

    meta = StayMeta(stay_id=STAY_ID_BASE + index, age=age, care_unit=care_unit,
                    stay_hours=stay_hours, first_icu_stay=True,
                    in_hospital_mortality=mortality)
    return PatientProfile(meta=meta, acuity=acuity, baseline_offsets=offsets,
                          circadian_period=rng.uniform(*CIRCADIAN_PERIOD_RANGE),
                          circadian_phase=rng.uniform(0.0, 24.0),
                          ultradian_period=rng.uniform(*ULTRADIAN_PERIOD_RANGE),
                          ultradian_phase=rng.uniform(0.0, 24.0),
                          response_speed=speed,
                          observe_rates=rates)


def generate_stays(n_patients: int, seed: int) -> List[StayMeta]:
    """Stay metadata only; used for cohort-level statistics."""
    if n_patients < 1:
        raise ConfigError("n_patients must be >= 1")
    return [_patient_profile(seed, i).meta for i in range(n_patients)]


def _patient_events(profile: PatientProfile, seed: int,
                    index: int) -> pd.DataFrame:
    """Observed measurements for one patient, time-sorted."""
    rng = np.random.default_rng([seed, index, 1])
    hours = len(profile.acuity)
    t_grid = np.arange(hours)

    baselines = np.array([s.baseline for s in FEATURES])
    gains = np.array([s.gain for s in FEATURES])
    circ = np.array([s.circadian_amp for s in FEATURES])
    noise_sd = np.array([s.noise_sd for s in FEATURES])
    lows = np.array([s.low for s in FEATURES])
    highs = np.array([s.high for s in FEATURES])

    lags = np.array([s.rhythm_lag for s in FEATURES])
    lagged = t_grid[:, None] + lags[None, :]
    rhythm = (np.sin(2.0 * np.pi * (lagged + profile.circadian_phase)
                     / profile.circadian_period)
              + ULTRADIAN_AMP_FACTOR
              * np.sin(2.0 * np.pi * (lagged + profile.ultradian_phase)
                       / profile.ultradian_period))

    patient_sd = np.array([s.patient_sd for s in FEATURES])
    local_sd = LOCAL_SCALE * patient_sd
    step_sd = local_sd * math.sqrt(1.0 - (1.0 - LOCAL_REVERSION) ** 2)
    eps = rng.normal(0.0, 1.0, (hours, NUM_FEATURES))
    local = np.empty((hours, NUM_FEATURES))
    local[0] = eps[0] * local_sd
    for t in range(1, hours):
        local[t] = (1.0 - LOCAL_REVERSION) * local[t - 1] + eps[t] * step_sd

    taus = np.array([s.response_hours for s in FEATURES])
    resp_amp = np.array([s.response_amp for s in FEATURES])
    phi = np.exp(-profile.response_speed / taus)
    phi_u = math.exp(-1.0 / STRESS_TAU)
    total = RESPONSE_BURN_HOURS + hours
    shocks = rng.normal(0.0, 1.0, total)
    stress = np.empty(total)
    stress[0] = shocks[0]
    stress_step = math.sqrt(1.0 - phi_u * phi_u)
    for t in range(1, total):
        stress[t] = phi_u * stress[t - 1] + stress_step * shocks[t]
    state = np.zeros(NUM_FEATURES)
    response = np.empty((hours, NUM_FEATURES))
    for t in range(total):
        state = phi * state + (1.0 - phi) * stress[t]
        if t >= RESPONSE_BURN_HOURS:
            response[t - RESPONSE_BURN_HOURS] = state
    # stationary sd of a first-order filter driven by the stress stream
    norm = (1.0 - phi) * np.sqrt((1.0 + phi * phi_u)
                                 / ((1.0 - phi * phi) * (1.0 - phi * phi_u)))
    response /= norm

    clean = (baselines[None, :] + profile.baseline_offsets[None, :]
             + gains[None, :] * profile.acuity[:, None]
             + local
             + circ[None, :] * rhythm
             + resp_amp[None, :] * response)

    observed = rng.random((hours, NUM_FEATURES)) < profile.observe_rates[None, :]
    repeat = observed & (rng.random((hours, NUM_FEATURES)) < COLLISION_RATE)

    rows_t, rows_f = np.nonzero(observed)
    rep_t, rep_f = np.nonzero(repeat)
    all_t = np.concatenate([rows_t, rep_t])
    all_f = np.concatenate([rows_f, rep_f])

    values = clean[all_t, all_f] + rng.normal(0.0, 1.0, all_t.size) * noise_sd[all_f]
    values = np.clip(values, lows[all_f], highs[all_f])
    jitter = rng.uniform(-0.45, 0.45, all_t.size)
    times = np.maximum(all_t + jitter, 0.0)

    frame = pd.DataFrame({
        "stay_id": np.full(all_t.size, profile.meta.stay_id, dtype=np.int64),
        "feature_id": all_f.astype(np.int64),
        "time_offset_hours": np.round(times, 2),
        "value": np.round(values, 2),
    })
    return frame.sort_values(["time_offset_hours", "feature_id"],
                             kind="mergesort", ignore_index=True)


def _file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def generate_synthetic_cohort(n_patients: int, seed: int, out_dir,
                              progress_every: Optional[int] = None) -> dict:
    """Write events.csv, stays.csv, features.csv and a manifest.

    Streams events patient by patient to bound memory. Returns the
    manifest dict (also written as manifest.json).
    """
    if n_patients < 1:
        raise ConfigError("n_patients must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events_path = out / "events.csv"
    stays_path = out / "stays.csv"

    stays: List[StayMeta] = []
    n_events = 0
    with events_path.open("w") as fh:
        fh.write("stay_id,feature_id,time_offset_hours,value\n")
        for i in range(n_patients):
            profile = _patient_profile(seed, i)
            stays.append(profile.meta)
            frame = _patient_events(profile, seed, i)
            n_events += len(frame)
            frame.to_csv(fh, index=False, header=False, lineterminator="\n")
            if progress_every and (i + 1) % progress_every == 0:
                print(f"  generated {i + 1}/{n_patients} patients")

    stays_frame = pd.DataFrame({
        "stay_id": [s.stay_id for s in stays],
        "age": [repr(round(s.age, 2)) for s in stays],
        "care_unit": [s.care_unit for s in stays],
        "stay_hours": [repr(round(s.stay_hours, 2)) for s in stays],
        "first_icu_stay": [int(s.first_icu_stay) for s in stays],
        "in_hospital_mortality": [int(s.in_hospital_mortality) for s in stays],
    })
    stays_frame.to_csv(stays_path, index=False, lineterminator="\n")
    write_schema_csv(out / "features.csv")

    digest = hashlib.sha256()
    for fname in ("events.csv", "stays.csv", "features.csv"):
        digest.update(fname.encode())
        digest.update(_file_sha256(out / fname).encode())

    manifest = {
        "kind": "synthetic_cohort",
        "n_patients": n_patients,
        "seed": seed,
        "n_events": n_events,
        "mortality_rate": sum(s.in_hospital_mortality for s in stays) / len(stays),
        "files": ["events.csv", "stays.csv", "features.csv"],
        "content_hash": digest.hexdigest(),
    }
    with (out / "manifest.json").open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
