//! Small summation helpers shared by the quadrature and Monte Carlo code.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated sum of a slice in index order.
pub fn compensated_sum(values: &[f64]) -> f64 {
    values.iter().copied().collect::<KahanSum>().value()
}

/// `true` when `r` is a nonnegative even integer, i.e. `|s|^r` is a polynomial in `s`.
pub(crate) fn is_even_integer(r: f64) -> bool {
    r >= 0.0 && r.fract() == 0.0 && (r as i64) % 2 == 0
}

/// Signed power with the convention `0^0 = 1`.
#[inline]
pub(crate) fn abs_pow(s: f64, r: f64) -> f64 {
    if r == 0.0 {
        1.0
    } else if r == 2.0 {
        s * s
    } else {
        s.abs().powf(r)
    }
}
