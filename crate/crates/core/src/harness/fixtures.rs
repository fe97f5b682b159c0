//! Deterministic metric traces with a known answer.

use crate::metrics::{MetricSample, SeriesKey, Timestamp};

/// Availability trace: constant request rate with a piecewise-constant bad fraction.
///
/// Emits `{service}_requests_total{code="200"}` and `{code="500"}` every `step_ms`
/// from 0 through `end`. `segments` holds `(start, bad_fraction)` pairs sorted by
/// start; the fraction applies to every increment that ends after `start`.
/// Counts stay integral when `rps * step` and `fraction * rps * step` are.
#[derive(Clone, Debug, PartialEq)]
pub struct BurnTrace {
    pub service: String,
    pub rps: f64,
    pub step_ms: i64,
    pub segments: Vec<(Timestamp, f64)>,
}

impl BurnTrace {
    pub fn new(service: &str, rps: f64, step_ms: i64) -> Self {
        BurnTrace { service: service.to_string(), rps, step_ms, segments: Vec::new() }
    }

    pub fn segment(mut self, start: Timestamp, bad_fraction: f64) -> Self {
        self.segments.push((start, bad_fraction));
        self
    }

    pub fn fraction_at(&self, t: Timestamp) -> f64 {
        self.segments.iter().rev().find(|(s, _)| t > *s).map(|(_, f)| *f).unwrap_or(0.0)
    }

    pub fn samples(&self, end: Timestamp) -> Vec<MetricSample> {
        let name = format!("{}_requests_total", self.service);
        let ok = SeriesKey::metric(&name).expect("valid service name").with_label("code", "200");
        let bad = ok.clone().with_label("code", "500");
        let per_step = self.rps * self.step_ms as f64 / 1000.0;
        let (mut good_n, mut bad_n) = (0.0, 0.0);
        let mut out = Vec::new();
        let mut t = 0;
        while t <= end {
            if t > 0 {
                let b = (per_step * self.fraction_at(t)).round();
                bad_n += b;
                good_n += per_step - b;
            }
            out.push(MetricSample::new(ok.clone(), t, good_n));
            out.push(MetricSample::new(bad.clone(), t, bad_n));
            t += self.step_ms;
        }
        out
    }
}

/// The default scenario with `seed` and a seeded schedule of error bursts on
/// one endpoint, so exactly one candidate metric carries the signal.
///
/// The four-hour run is cut into 45-minute slots; each slot gets one burst
/// of 8 to 15 minutes at an error ratio between 0.15 and 0.3.
pub fn fault_scenario(seed: u64) -> super::ScenarioConfig {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = super::default_scenario();
    cfg.name = format!("fault-{seed}");
    cfg.seed = seed;
    cfg.fl.seed = seed;
    let slot = 45;
    let faults = (0..cfg.duration.as_millis() / 60_000 / slot)
        .map(|k| {
            let len = rng.gen_range(8..=15);
            let start = 8 + k * slot + rng.gen_range(0..slot - len - 8);
            super::Fault {
                start: crate::Duration::from_mins(start),
                duration: crate::Duration::from_mins(len),
                path: Some("/secrets".into()),
                error_ratio_override: Some(rng.gen_range(0.15..0.3)),
                latency_scale: None,
            }
        })
        .collect();
    cfg.services[0].faults = faults;
    cfg
}
