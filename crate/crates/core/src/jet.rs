//! Truncated bivariate Taylor jets.
//!
//! A jet of order `m` stores the coefficients `c[i][j]` of `dx^i dy^j` with
//! `i + j <= m`. One-dimensional work simply never touches `j > 0`.

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    order: usize,
    c: Vec<f64>,
}

impl Jet {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.order + 1) + j
    }

    pub fn constant(order: usize, v: f64) -> Self {
        let mut c = vec![0.0; (order + 1) * (order + 1)];
        c[0] = v;
        Self { order, c }
    }

    /// The coordinate function `v0 + d(axis)`.
    pub fn variable(order: usize, axis: usize, v0: f64) -> Self {
        let mut j = Self::constant(order, v0);
        if order >= 1 {
            let k = if axis == 0 { j.idx(1, 0) } else { j.idx(0, 1) };
            j.c[k] = 1.0;
        }
        j
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        if i + j > self.order {
            0.0
        } else {
            self.c[self.idx(i, j)]
        }
    }

    /// Partial derivative `d^{i+j} / dx^i dy^j` at the expansion point.
    pub fn derivative(&self, i: usize, j: usize) -> f64 {
        self.coeff(i, j) * factorial(i) * factorial(j)
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn add(&self, other: &Jet) -> Jet {
        let c = self.c.iter().zip(&other.c).map(|(a, b)| a + b).collect();
        Jet { order: self.order, c }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet { order: self.order, c: self.c.iter().map(|a| a * s).collect() }
    }

    pub fn mul(&self, other: &Jet) -> Jet {
        let m = self.order;
        let mut out = Jet::constant(m, 0.0);
        for i1 in 0..=m {
            for j1 in 0..=(m - i1) {
                let a = self.c[self.idx(i1, j1)];
                if a == 0.0 {
                    continue;
                }
                for i2 in 0..=(m - i1 - j1) {
                    for j2 in 0..=(m - i1 - j1 - i2) {
                        let k = out.idx(i1 + i2, j1 + j2);
                        out.c[k] += a * other.c[other.idx(i2, j2)];
                    }
                }
            }
        }
        out
    }

    /// Nilpotent part (the jet minus its constant term).
    fn nilpotent(&self) -> Jet {
        let mut n = self.clone();
        n.c[0] = 0.0;
        n
    }

    /// Sum over k of `coef[k] * N^k`, with N the nilpotent part.
    fn series(&self, coef: impl Fn(usize) -> f64) -> Jet {
        let n = self.nilpotent();
        let mut out = Jet::constant(self.order, coef(0));
        let mut power = Jet::constant(self.order, 1.0);
        for k in 1..=self.order {
            power = power.mul(&n);
            out = out.add(&power.scale(coef(k)));
        }
        out
    }

    pub fn recip(&self) -> Jet {
        let u0 = self.value();
        self.series(|k| {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            s / u0.powi(k as i32 + 1)
        })
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        self.series(|k| e / factorial(k))
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |a, b| a * b as f64)
}
