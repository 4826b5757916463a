/// Symmetric 2x2 matrix `[[a, b], [b, c]]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 { a: 0.0, b: 0.0, c: 0.0 };
    pub const IDENTITY: Sym2 = Sym2 { a: 1.0, b: 0.0, c: 1.0 };

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Sym2 { a, b, c }
    }

    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn trace(&self) -> f64 {
        self.a + self.c
    }

    /// Inverse, or `None` when the determinant is not positive relative to
    /// the scale of the entries.
    pub fn inverse(&self) -> Option<Sym2> {
        let det = self.det();
        let scale = self.a.abs().max(self.c.abs());
        if !(det > 1e-14 * scale * scale) {
            return None;
        }
        Some(Sym2::new(self.c / det, -self.b / det, self.a / det))
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2::new(self.a * s, self.b * s, self.c * s)
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.a + o.a, self.b + o.b, self.c + o.c)
    }

    pub fn axpy(&mut self, s: f64, o: &Sym2) {
        self.a += s * o.a;
        self.b += s * o.b;
        self.c += s * o.c;
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.b * v[0] + self.c * v[1]]
    }

    /// `vᵀ M v`.
    pub fn quad(&self, v: [f64; 2]) -> f64 {
        self.a * v[0] * v[0] + 2.0 * self.b * v[0] * v[1] + self.c * v[1] * v[1]
    }

    /// `tr(M N)` for symmetric `M`, `N`.
    pub fn dot(&self, o: &Sym2) -> f64 {
        self.a * o.a + 2.0 * self.b * o.b + self.c * o.c
    }

    /// `M N` as a general matrix in row-major order.
    pub fn mul(&self, o: &Sym2) -> [f64; 4] {
        [
            self.a * o.a + self.b * o.b,
            self.a * o.b + self.b * o.c,
            self.b * o.a + self.c * o.b,
            self.b * o.b + self.c * o.c,
        ]
    }

    /// `tr(P Q)` for general row-major 2x2 matrices `P`, `Q`.
    pub fn trace_of_products(p: &[f64; 4], q: &[f64; 4]) -> f64 {
        p[0] * q[0] + p[1] * q[2] + p[2] * q[1] + p[3] * q[3]
    }

    /// `uᵀ M S N u` for symmetric `M`, `S`, `N`.
    pub fn bilinear3(u: [f64; 2], m: &Sym2, s: &Sym2, n: &Sym2) -> f64 {
        let left = m.apply(u);
        let right = n.apply(u);
        s.quad_pair(left, right)
    }

    /// `xᵀ M y`.
    pub fn quad_pair(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        x[0] * (self.a * y[0] + self.b * y[1]) + x[1] * (self.b * y[0] + self.c * y[1])
    }
}
