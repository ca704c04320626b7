//! Small numerical helpers shared by the phase and fit code.

/// Neumaier (improved Kahan–Babuška) compensated accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Neumaier {
    sum: f64,
    compensation: f64,
}

impl Neumaier {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for Neumaier {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Neumaier::default();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Integral over one panel of a function known by value and slope at both
/// ends (cubic Hermite rule, error O(h⁵)).
pub fn hermite_panel(h: f64, f0: f64, f1: f64, df0: f64, df1: f64) -> f64 {
    0.5 * h * (f0 + f1) + h * h * (df0 - df1) / 12.0
}
