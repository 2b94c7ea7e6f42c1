//! Deterministic rehab-like benchmark corpus with known ground truth.
//!
//! Every patient draws a latent health factor `f ~ N(0,1)` that drives the
//! informative features, the four ergometry measurements, and the chance
//! of improving during the program. The risk label is a pure function of
//! the emitted start/end ergometry values, and the masking step always
//! leaves one label-witnessing pair observed, so ground truth stays
//! recoverable from the CSV alone.
//!
//! Generator constants (all fixed so downstream oracles are reproducible):
//!
//! - informative features: `x_i = A_COEFFS[i % 8] * f + N(0, 0.5^2)`
//! - ergometry starts: `s_v = exp(0.3 * f + BASE_LOG[v] + N(0, 0.1^2))`
//! - improvement chance: `P(any pair improves) = sigmoid(1.2 * f + 0.3)`,
//!   spread over the four variables independently
//! - improving pairs gain `U(0.20, 0.60)`, the rest drift `U(-0.25, 0.10)`

use rand::Rng;

use crate::dataprep::{
    AttributeKind, AttributeRole, AttributeSpec, PrepError, RawTable, Schema,
};
use crate::seeds;

/// Per-feature slopes on the health factor, cycled when more than eight
/// informative features are requested.
pub const A_COEFFS: [f64; 8] = [1.0, -0.8, 0.6, -1.2, 0.9, -0.5, 1.1, -0.7];

/// Log-scale baselines for the four ergometry variables.
pub const ERGOMETRY_VARS: [&str; 4] = ["vo2", "watts", "mets", "duration"];
pub const BASE_LOG: [f64; 4] = [1.1, 4.8, 1.6, 2.2];

const FEATURE_NOISE_SD: f64 = 0.5;
const ERGOMETRY_NOISE_SD: f64 = 0.1;
const IMPROVE_SLOPE: f64 = 1.2;
const IMPROVE_BIAS: f64 = 0.3;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub patients: usize,
    pub informative: usize,
    pub noise: usize,
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            patients: 811,
            informative: 8,
            noise: 20,
            missing_rate: 0.20,
            seed: 42,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), PrepError> {
        if self.patients < 50 {
            return Err(PrepError::Config(format!(
                "need at least 50 patients, got {}",
                self.patients
            )));
        }
        if !(0.0..0.9).contains(&self.missing_rate) {
            return Err(PrepError::Config(format!(
                "missing rate must lie in [0, 0.9), got {}",
                self.missing_rate
            )));
        }
        if self.informative == 0 {
            return Err(PrepError::Config("need at least one informative feature".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub table: RawTable,
    pub schema: Schema,
    /// Ground-truth labels per row (1 = risk).
    pub labels: Vec<u8>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Expected non-risk fraction of the design, `E_f[sigmoid(1.2 f + 0.3)]`,
/// evaluated by quadrature over the standard normal.
pub fn design_non_risk_rate() -> f64 {
    let steps = 20_000;
    let (lo, hi) = (-8.0f64, 8.0f64);
    let dx = (hi - lo) / steps as f64;
    let mut acc = 0.0;
    for i in 0..steps {
        let f = lo + (i as f64 + 0.5) * dx;
        let phi = (-0.5 * f * f).exp() / (2.0 * std::f64::consts::PI).sqrt();
        acc += sigmoid(IMPROVE_SLOPE * f + IMPROVE_BIAS) * phi * dx;
    }
    acc
}

/// Generates the benchmark corpus. Byte-deterministic for a fixed config.
pub fn generate_benchmark(cfg: &BenchConfig) -> Benchmark {
    cfg.validate().expect("validated config");
    let mut rng = seeds::derive_rng(cfg.seed, "benchmark", &[]);

    let mut columns: Vec<String> = (0..cfg.informative).map(|i| format!("x{}", i + 1)).collect();
    for var in ERGOMETRY_VARS {
        columns.push(format!("{var}_start"));
        columns.push(format!("{var}_end"));
    }
    let noise_cards: Vec<usize> = (0..cfg.noise).map(|i| 3 + i % 4).collect();
    for i in 0..cfg.noise {
        columns.push(format!("noise{}", i + 1));
    }
    columns.push("risk".to_string());

    let mut rows = Vec::with_capacity(cfg.patients);
    let mut labels = Vec::with_capacity(cfg.patients);
    for _ in 0..cfg.patients {
        let f = seeds::standard_normal(&mut rng);

        let mut cells: Vec<Option<String>> = Vec::with_capacity(columns.len());
        for i in 0..cfg.informative {
            let x = A_COEFFS[i % A_COEFFS.len()] * f
                + FEATURE_NOISE_SD * seeds::standard_normal(&mut rng);
            cells.push(Some(format!("{x}")));
        }

        // one Bernoulli per variable so that P(any improves) = sigmoid(...)
        let q = sigmoid(IMPROVE_SLOPE * f + IMPROVE_BIAS);
        let p_var = 1.0 - (1.0 - q).powf(0.25);
        let mut improves = [false; 4];
        let mut deltas = [0.0f64; 4];
        for v in 0..4 {
            improves[v] = rng.gen_bool(p_var.clamp(0.0, 1.0));
            deltas[v] = if improves[v] {
                rng.gen_range(0.20..0.60)
            } else {
                rng.gen_range(-0.25..0.10)
            };
        }
        let label = u8::from(!improves.iter().any(|&b| b));

        let mut ergometry_cells = Vec::with_capacity(8);
        for v in 0..4 {
            let start = (0.3 * f + BASE_LOG[v] + ERGOMETRY_NOISE_SD * seeds::standard_normal(&mut rng))
                .exp();
            let end = start * (1.0 + deltas[v]);
            ergometry_cells.push(Some(format!("{start}")));
            ergometry_cells.push(Some(format!("{end}")));
        }

        // independent masking, then re-open one witness pair for the label
        let mut masked = [false; 8];
        for m in &mut masked {
            *m = rng.gen_bool(cfg.missing_rate);
        }
        let witness_candidates: Vec<usize> = (0..4)
            .filter(|&v| label == 1 || improves[v])
            .collect();
        let witness = witness_candidates[rng.gen_range(0..witness_candidates.len())];
        masked[2 * witness] = false;
        masked[2 * witness + 1] = false;
        for (v, cell) in ergometry_cells.into_iter().enumerate() {
            cells.push(if masked[v] { None } else { cell });
        }

        for (i, &card) in noise_cards.iter().enumerate() {
            let _ = i;
            let value = rng.gen_range(0..card);
            let cell = if rng.gen_bool(cfg.missing_rate) {
                None
            } else {
                Some(format!("c{value}"))
            };
            cells.push(cell);
        }

        cells.push(Some(
            if label == 1 { "risk" } else { "non-risk" }.to_string(),
        ));
        rows.push(cells);
        labels.push(label);
    }

    let mut attrs: Vec<AttributeSpec> = (0..cfg.informative)
        .map(|i| {
            AttributeSpec::new(
                format!("x{}", i + 1),
                AttributeKind::ContinuousBinned,
                AttributeRole::Feature,
            )
        })
        .collect();
    for var in ERGOMETRY_VARS {
        attrs.push(AttributeSpec::new(
            format!("{var}_start"),
            AttributeKind::ContinuousBinned,
            AttributeRole::Feature,
        ));
        attrs.push(AttributeSpec::new(
            format!("{var}_end"),
            AttributeKind::ContinuousBinned,
            AttributeRole::GenerationOnly,
        ));
    }
    for (i, &card) in noise_cards.iter().enumerate() {
        attrs.push(
            AttributeSpec::new(
                format!("noise{}", i + 1),
                AttributeKind::Categorical,
                AttributeRole::Feature,
            )
            .with_categories((0..card).map(|c| format!("c{c}")).collect()),
        );
    }
    attrs.push(
        AttributeSpec::new("risk", AttributeKind::Binary, AttributeRole::Condition)
            .with_categories(vec!["non-risk".into(), "risk".into()]),
    );

    Benchmark {
        table: RawTable { columns, rows },
        schema: Schema::new(attrs),
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::derive_features;

    #[test]
    fn generation_is_deterministic() {
        let cfg = BenchConfig {
            patients: 60,
            ..BenchConfig::default()
        };
        let a = generate_benchmark(&cfg);
        let b = generate_benchmark(&cfg);
        assert_eq!(a.table.rows, b.table.rows);
        assert_eq!(a.labels, b.labels);
        let different = generate_benchmark(&BenchConfig { seed: 43, ..cfg });
        assert_ne!(a.table.rows, different.table.rows);
    }

    #[test]
    fn labels_are_recoverable_from_emitted_ergometry() {
        let bench = generate_benchmark(&BenchConfig::default());
        let out = derive_features(&bench.table, &bench.schema).unwrap();
        assert_eq!(out.rejected, 0, "witness pair must always survive masking");
        assert_eq!(out.labels, bench.labels);
    }

    #[test]
    fn class_ratio_is_near_the_design_target() {
        let bench = generate_benchmark(&BenchConfig::default());
        let non_risk =
            bench.labels.iter().filter(|&&l| l == 0).count() as f64 / bench.labels.len() as f64;
        let target = design_non_risk_rate();
        assert!(
            (non_risk - target).abs() <= 0.05,
            "non-risk rate {} vs design {}",
            non_risk,
            target
        );
    }

    #[test]
    fn config_bounds_are_enforced() {
        assert!(BenchConfig {
            patients: 49,
            ..BenchConfig::default()
        }
        .validate()
        .is_err());
        assert!(BenchConfig {
            missing_rate: 0.95,
            ..BenchConfig::default()
        }
        .validate()
        .is_err());
    }
}
