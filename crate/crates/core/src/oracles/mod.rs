//! Standalone numerical checks of the norm and information-theoretic facts
//! behind the norm objective.

mod entropy;
mod linearity;
mod sphere;
mod toy;

pub use entropy::{conditional_entropy, entropy_identity_check, EntropyReport};
pub use linearity::{norm_linearity_check, LinearityReport};
pub use sphere::{angle, orthogonality_check, orthogonality_tail_monotone, OrthogonalityReport};
pub use toy::{toy_matrix_check, ToyReport};

use serde::Serialize;

use crate::evaluation::{mutual_information, redundant_joint, MutualInformation};
use crate::tensor::Rng;

/// Outcome of one check: a name, a verdict, and human-readable detail lines.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: Vec<String>,
}

impl CheckReport {
    /// Machine-readable one-line summary.
    pub fn summary(&self) -> String {
        format!("check {} {}", self.name, if self.passed { "PASS" } else { "FAIL" })
    }
}

/// The finite joint with `I(Y;R1,R2) < I(Y;R1) + I(Y;R2)`.
pub fn subadditivity_check() -> (CheckReport, MutualInformation) {
    let mi = mutual_information(&redundant_joint());
    let passed = mi.strictly_subadditive(1e-9);
    let report = CheckReport {
        name: "mi_subadditivity".into(),
        passed,
        detail: vec![
            "Y uniform binary, R1 = R2 = Y".into(),
            format!("I(Y;R1) = {:.6}, I(Y;R2) = {:.6}", mi.y_r1, mi.y_r2),
            format!(
                "I(Y;R1,R2) = {:.6} < I(Y;R1) + I(Y;R2) = {:.6}",
                mi.y_r1r2,
                mi.y_r1 + mi.y_r2
            ),
        ],
    };
    (report, mi)
}

/// Runs every check with default sizes.
pub fn run_all(seed: u64) -> Vec<CheckReport> {
    let rng = Rng::with_stream(seed, 0x0AC1E);
    let toy = toy_matrix_check().report();

    let mut sphere = orthogonality_check(512, 10_000, 0.3, &mut rng.split(0)).report();
    let (monotone, tails) = orthogonality_tail_monotone(&[8, 32, 128, 512], 10_000, 0.3, &rng.split(1));
    sphere.detail.push(format!(
        "tail probability over p = 8, 32, 128, 512: {}",
        tails.iter().map(|t| format!("{t:.4}")).collect::<Vec<_>>().join(", ")
    ));
    sphere.passed &= monotone && tails[3] < 0.01;

    let linear = norm_linearity_check(16, 8, &[0, 1, 2, 4, 8, 16], &mut rng.split(2)).report();

    let tables: [[f64; 2]; 3] = [[0.0, 1.0], [0.5, 0.5], [0.2, 0.8]];
    let mut entropy = CheckReport {
        name: "entropy_identity".into(),
        passed: true,
        detail: vec![],
    };
    for (i, row) in tables.iter().enumerate() {
        match entropy_identity_check(&[*row], 20_000, 400, &mut rng.split(3 + i as u64)) {
            Ok(r) => {
                entropy.passed &= r.passed;
                entropy.detail.push(r.line());
            }
            Err(e) => {
                entropy.passed = false;
                entropy.detail.push(e.to_string());
            }
        }
    }
    let mixed = [[0.9, 0.1], [0.5, 0.5], [0.0, 1.0], [0.3, 0.7]];
    match entropy_identity_check(&mixed, 40_000, 400, &mut rng.split(10)) {
        Ok(r) => {
            entropy.passed &= r.passed;
            entropy.detail.push(r.line());
        }
        Err(e) => {
            entropy.passed = false;
            entropy.detail.push(e.to_string());
        }
    }

    vec![toy, sphere, linear, entropy, subadditivity_check().0]
}
