//! Synthetic single-route transit simulator.
//!
//! Each service day runs a fixed number of trips over one route. Delays follow
//! an AR(1) recursion along the stops with peak-hour, traffic-signal, daily
//! and Gaussian terms, clamped to the admissible delay window.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::params::name_seed;
use crate::error::{Error, Result};
use crate::sample::{
    Dataset, Record, Split, TemporalSample, MAX_DELAY_S, MIN_DELAY_S, N_CONTEXT, N_FEATURES,
};

const HOUR: f64 = 3600.0;
const DAY: f64 = 24.0 * HOUR;
const SERVICE_START: f64 = 5.0 * HOUR;
const PEAKS: [(f64, f64); 2] = [(7.0 * HOUR, 9.0 * HOUR), (16.0 * HOUR, 19.0 * HOUR)];

/// Stops and the links between them. Link `j` joins stop `j` to stop `j + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub n_stops: usize,
    pub link_length_m: Vec<f64>,
    pub scheduled_link_time_s: Vec<f64>,
    pub signalized: Vec<u8>,
}

impl RouteSpec {
    /// Random route: links of 300 to 900 m run at about 8 m/s plus a 25 s dwell.
    pub fn generate(n_stops: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, "route"));
        let links = n_stops.saturating_sub(1);
        let mut link_length_m = Vec::with_capacity(links);
        let mut scheduled_link_time_s = Vec::with_capacity(links);
        let mut signalized = Vec::with_capacity(links);
        for _ in 0..links {
            let len: f64 = rng.random_range(300.0..900.0);
            link_length_m.push(len.round());
            scheduled_link_time_s.push((len / 8.0 + 25.0).round());
            signalized.push(u8::from(rng.random_bool(0.4)));
        }
        Self {
            n_stops,
            link_length_m,
            scheduled_link_time_s,
            signalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let links = self.n_stops.saturating_sub(1);
        if self.n_stops < 2
            || self.link_length_m.len() != links
            || self.scheduled_link_time_s.len() != links
            || self.signalized.len() != links
        {
            return Err(Error::Config(
                "route vectors must have n_stops - 1 links".into(),
            ));
        }
        if self
            .link_length_m
            .iter()
            .chain(&self.scheduled_link_time_s)
            .any(|&v| !(v > 0.0 && v.is_finite()))
        {
            return Err(Error::Config(
                "link lengths and times must be positive".into(),
            ));
        }
        if self.signalized.iter().any(|&s| s > 1) {
            return Err(Error::Config("signalized flags must be 0 or 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelayProcessParams {
    pub ar_coeff: f64,
    pub noise_std_s: f64,
    pub peak_surcharge_s: f64,
    pub signal_delay_mean_s: f64,
    pub daily_period_amplitude_s: f64,
    pub initial_delay_mean_s: f64,
    pub initial_delay_std_s: f64,
    /// Std of a per-trip constant added on every link.
    pub trip_offset_std_s: f64,
    pub seed: u64,
}

impl Default for DelayProcessParams {
    fn default() -> Self {
        Self {
            ar_coeff: 0.8,
            noise_std_s: 10.0,
            peak_surcharge_s: 6.0,
            signal_delay_mean_s: 3.0,
            daily_period_amplitude_s: 2.0,
            initial_delay_mean_s: 10.0,
            initial_delay_std_s: 40.0,
            trip_offset_std_s: 1.5,
            seed: 7,
        }
    }
}

impl DelayProcessParams {
    /// A process with every term switched off.
    pub fn null(seed: u64) -> Self {
        Self {
            ar_coeff: 0.0,
            noise_std_s: 0.0,
            peak_surcharge_s: 0.0,
            signal_delay_mean_s: 0.0,
            daily_period_amplitude_s: 0.0,
            initial_delay_mean_s: 0.0,
            initial_delay_std_s: 0.0,
            trip_offset_std_s: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.ar_coeff,
            self.noise_std_s,
            self.peak_surcharge_s,
            self.signal_delay_mean_s,
            self.daily_period_amplitude_s,
            self.initial_delay_mean_s,
            self.initial_delay_std_s,
            self.trip_offset_std_s,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("delay parameters must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.ar_coeff) {
            return Err(Error::Config("ar_coeff must lie in [0, 1)".into()));
        }
        if self.noise_std_s < 0.0
            || self.initial_delay_std_s < 0.0
            || self.trip_offset_std_s < 0.0
            || self.signal_delay_mean_s < 0.0
        {
            return Err(Error::Config(
                "standard deviations and signal mean must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Scheduled and actual arrival (seconds since service-day midnight) per stop.
#[derive(Clone, Debug, PartialEq)]
pub struct Trip {
    pub schedule: Vec<f64>,
    pub actual: Vec<f64>,
}

impl Trip {
    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }

    pub fn delays(&self) -> Vec<f64> {
        self.actual
            .iter()
            .zip(&self.schedule)
            .map(|(a, s)| a - s)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimDay {
    pub day_index: u32,
    pub trips: Vec<Trip>,
}

pub fn is_weekday(day_index: u32) -> bool {
    day_index % 7 < 5
}

pub fn in_peak(t: f64, weekday: bool) -> bool {
    let tod = t.rem_euclid(DAY);
    weekday && PEAKS.iter().any(|&(a, b)| tod >= a && tod < b)
}

fn clamp_delay(d: f64) -> f64 {
    d.clamp(MIN_DELAY_S, MAX_DELAY_S)
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).expect("std validated non-negative")
}

/// Runs `trips_per_day` trips spread over the 05:00–23:00 service window.
pub fn simulate_day(
    route: &RouteSpec,
    params: &DelayProcessParams,
    day_index: u32,
    trips_per_day: usize,
) -> SimDay {
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(params.seed, &format!("day{day_index}")));
    let weekday = is_weekday(day_index);
    let headway = if trips_per_day > 1 {
        18.0 * HOUR / trips_per_day as f64
    } else {
        0.0
    };
    let noise = normal(0.0, params.noise_std_s);
    let init = normal(params.initial_delay_mean_s, params.initial_delay_std_s);
    let offset = normal(0.0, params.trip_offset_std_s);
    let trips = (0..trips_per_day)
        .map(|i| {
            let start = (SERVICE_START + i as f64 * headway).round();
            let mut schedule = Vec::with_capacity(route.n_stops);
            let mut actual = Vec::with_capacity(route.n_stops);
            let mut delay = clamp_delay(init.sample(&mut rng));
            let trip_offset = offset.sample(&mut rng);
            schedule.push(start);
            actual.push(start + delay);
            for j in 0..route.n_stops.saturating_sub(1) {
                let depart = schedule[j];
                let mut d = params.ar_coeff * delay + trip_offset;
                if in_peak(depart, weekday) {
                    d += params.peak_surcharge_s;
                }
                if route.signalized[j] == 1 && params.signal_delay_mean_s > 0.0 {
                    d += rng.random_range(0.0..2.0 * params.signal_delay_mean_s);
                }
                d += params.daily_period_amplitude_s * (2.0 * PI * depart / DAY).sin();
                d += noise.sample(&mut rng);
                delay = clamp_delay(d);
                let s = depart + route.scheduled_link_time_s[j];
                schedule.push(s);
                actual.push(s + delay);
            }
            Trip { schedule, actual }
        })
        .collect();
    SimDay { day_index, trips }
}

/// Per-stop feature rows of one trip (stop 0 has no incoming link).
fn trip_features(route: &RouteSpec, trip: &Trip, mean_travel: &[f64]) -> Vec<[f64; N_FEATURES]> {
    let delays = trip.delays();
    (0..trip.len())
        .map(|j| {
            if j == 0 {
                [0.0, 0.0, delays[0], 0.0, 0.0]
            } else {
                [
                    route.link_length_m[j - 1],
                    trip.actual[j] - trip.actual[j - 1],
                    delays[j],
                    f64::from(route.signalized[j - 1]),
                    mean_travel.get(j).copied().unwrap_or(0.0),
                ]
            }
        })
        .collect()
}

/// Mean actual travel time into each stop over the given days.
pub fn mean_travel_times(route: &RouteSpec, days: &[&SimDay]) -> Vec<f64> {
    let mut sum = vec![0.0; route.n_stops];
    let mut count = vec![0usize; route.n_stops];
    for day in days {
        for trip in &day.trips {
            for j in 1..trip.len() {
                sum[j] += trip.actual[j] - trip.actual[j - 1];
                count[j] += 1;
            }
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

/// Samples cut from a set of days, with the number of trips too short to use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Slices {
    pub records: Vec<Record>,
    pub skipped_trips: usize,
}

/// Stride-1 windows of `n_p` past and `n_f` future stops from every trip.
pub fn slice_samples(
    route: &RouteSpec,
    days: &[&SimDay],
    n_p: usize,
    n_f: usize,
    mean_travel: &[f64],
    split: Split,
) -> Slices {
    let mut out = Slices::default();
    let t = n_p + n_f;
    for day in days {
        let weekend = u8::from(!is_weekday(day.day_index));
        for (ti, trip) in day.trips.iter().enumerate() {
            if trip.len() < t || t == 0 {
                out.skipped_trips += 1;
                continue;
            }
            let feats = trip_features(route, trip, mean_travel);
            let delays = trip.delays();
            let context: Vec<[u8; N_CONTEXT]> = trip
                .schedule
                .iter()
                .map(|&s| [u8::from(in_peak(s, weekend == 0)), weekend])
                .collect();
            for start in 0..=trip.len() - t {
                let fut = start + n_p..start + t;
                let sample = TemporalSample {
                    past_features: feats[start..start + n_p].to_vec(),
                    context: context[start..start + t].to_vec(),
                    future_schedule: trip.schedule[fut.clone()].to_vec(),
                    future_delay_truth: delays[fut.clone()].to_vec(),
                    future_arrival_truth: fut.map(|j| trip.schedule[j] + delays[j]).collect(),
                };
                out.records.push(Record {
                    split,
                    day: day.day_index,
                    trip: ti as u32,
                    sample,
                });
            }
        }
    }
    out
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_stops: usize,
    pub days: u32,
    pub trips_per_day: usize,
    pub n_p: usize,
    pub n_f: usize,
    pub route_seed: u64,
    pub process: DelayProcessParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_stops: 30,
            days: 21,
            trips_per_day: 60,
            n_p: 10,
            n_f: 5,
            route_seed: 1,
            process: DelayProcessParams::default(),
        }
    }
}

/// Day counts of the 70/10/20 train/val/test split (each split at least one day).
pub fn split_days(days: u32) -> (u32, u32, u32) {
    let train = ((days as f64 * 0.7).round() as u32).clamp(1, days.saturating_sub(2).max(1));
    let val = ((days as f64 * 0.1).round() as u32).max(1);
    let test = days.saturating_sub(train + val);
    (train, val, test)
}

/// Simulates `cfg.days` service days and slices them into a split dataset.
/// The mean travel time feature is averaged over the training days only.
pub fn build_dataset(cfg: &SimConfig) -> Result<Dataset> {
    cfg.process.validate()?;
    if cfg.days < 3 {
        return Err(Error::Config(
            "need at least 3 days for train/val/test".into(),
        ));
    }
    if cfg.n_p < 2 || cfg.n_f == 0 {
        return Err(Error::Config("n_p must be >= 2 and n_f >= 1".into()));
    }
    if cfg.n_stops < cfg.n_p + cfg.n_f + 1 {
        return Err(Error::Config(
            "route needs at least n_p + n_f + 1 stops".into(),
        ));
    }
    let route = RouteSpec::generate(cfg.n_stops, cfg.route_seed);
    route.validate()?;
    let sim: Vec<SimDay> = (0..cfg.days)
        .map(|d| simulate_day(&route, &cfg.process, d, cfg.trips_per_day))
        .collect();
    let (train, val, _) = split_days(cfg.days);
    let groups: [(Split, std::ops::Range<u32>); 3] = [
        (Split::Train, 0..train),
        (Split::Val, train..train + val),
        (Split::Test, train + val..cfg.days),
    ];
    let train_days: Vec<&SimDay> = sim[..train as usize].iter().collect();
    let mean_travel = mean_travel_times(&route, &train_days);
    let mut ds = Dataset::new(cfg.n_p, cfg.n_f, cfg.process.seed);
    for (split, range) in groups {
        let days: Vec<&SimDay> = sim[range.start as usize..range.end as usize]
            .iter()
            .collect();
        let s = slice_samples(&route, &days, cfg.n_p, cfg.n_f, &mean_travel, split);
        ds.header.skipped_trips += s.skipped_trips;
        ds.records.extend(s.records);
    }
    Ok(ds)
}
