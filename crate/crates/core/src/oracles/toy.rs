use super::CheckReport;

/// `‖AM‖₂` and `‖BM‖₂` for the 4x3 upper-triangular toy matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyReport {
    pub norm_a: f64,
    pub norm_b: f64,
    pub norm_sum: f64,
}

const M: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]];

fn row_times_m(x: [f64; 4]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, row) in M.iter().enumerate() {
        for j in 0..3 {
            out[j] += x[i] * row[j];
        }
    }
    out
}

fn norm(v: [f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn toy_matrix_check() -> ToyReport {
    let a = [1.0, 0.0, 0.0, 0.0];
    let b = [0.0, 0.0, 0.0, 1.0];
    ToyReport {
        norm_a: norm(row_times_m(a)),
        norm_b: norm(row_times_m(b)),
        norm_sum: norm(row_times_m([1.0, 0.0, 0.0, 1.0])),
    }
}

impl ToyReport {
    pub fn passed(&self) -> bool {
        self.norm_a == 3.0f64.sqrt() && self.norm_b == 0.0 && self.norm_sum == 3.0f64.sqrt()
    }

    pub fn report(&self) -> CheckReport {
        CheckReport {
            name: "toy_matrix".into(),
            passed: self.passed(),
            detail: vec![
                format!("||AM|| = {:.7} (sqrt 3 = {:.7})", self.norm_a, 3.0f64.sqrt()),
                format!("||BM|| = {}", self.norm_b),
                format!("||(A+B)M|| = {:.7}", self.norm_sum),
            ],
        }
    }
}
