//! Error-free transformations for values evaluated right at a constraint
//! boundary, where plain `f64` sums lose the last few bits of the margin.

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        Dd { hi, lo }
    }

    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        *self = Dd::new(s, e + self.lo);
    }

    /// `self += a * b`.
    pub fn add_prod(&mut self, a: f64, b: f64) {
        let (p, e) = two_prod(a, b);
        let (s, e2) = two_sum(self.hi, p);
        *self = Dd::new(s, e2 + e + self.lo);
    }

    /// `self += x * a * b` for double-double `x`.
    pub fn add_prod3(&mut self, x: Dd, a: f64, b: f64) {
        let (w, w_lo) = two_prod(a, b);
        let (xw, xw_lo) = two_prod(x.hi, w);
        let (s, e) = two_sum(self.hi, xw);
        *self = Dd::new(s, e + xw_lo + x.hi * w_lo + x.lo * w + self.lo);
    }

    pub fn mul(self, other: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, other.hi);
        Dd::new(p, e + self.hi * other.lo + self.lo * other.hi)
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}
