use crate::tensor::bias_ratio_in;

/// One line of the reduced-precision demonstration.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionRow {
    pub offset: f64,
    pub bits: u32,
    pub method: &'static str,
    pub exact: f64,
    pub computed: f64,
    pub relative_error: f64,
}

pub const PRECISION_HEADER: &str = "offset,bits,method,exact,computed,relative_error";

impl PrecisionRow {
    pub fn csv(&self) -> String {
        format!(
            "{:e},{},{},{:e},{:e},{:e}",
            self.offset, self.bits, self.method, self.exact, self.computed, self.relative_error
        )
    }
}

/// Output bias of the 1-d outputs `offset +- 1` computed with the two-pass
/// and the one-pass recipe in 32 and 64 bit, for each offset. The exact
/// value is `sqrt(1 + offset^2)`.
pub fn precision_check(offsets: &[f64], n: usize) -> Vec<PrecisionRow> {
    let mut rows = Vec::new();
    for &offset in offsets {
        let values: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![offset + if i % 2 == 0 { 1.0 } else { -1.0 }])
            .collect();
        let exact = (1.0 + offset * offset).sqrt();
        for bits in [32u32, 64] {
            for (method, two_pass) in [("two_pass", true), ("one_pass", false)] {
                let computed = if bits == 32 {
                    bias_ratio_in::<f32>(&values, two_pass)
                } else {
                    bias_ratio_in::<f64>(&values, two_pass)
                };
                let relative_error = if computed.is_finite() {
                    ((computed - exact) / exact).abs()
                } else {
                    f64::INFINITY
                };
                rows.push(PrecisionRow {
                    offset,
                    bits,
                    method,
                    exact,
                    computed,
                    relative_error,
                });
            }
        }
    }
    rows
}
