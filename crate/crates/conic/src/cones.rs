//! Cone definitions and the Nesterov–Todd scaling machinery used by the
//! interior-point iteration.
//!
//! Supported cones: the zero cone (equality rows), the nonnegative orthant
//! and second-order cones `{(t, x) : ‖x‖ ≤ t}`.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Zero(usize),
    Nonneg(usize),
    /// Second-order cone of the given total dimension (≥ 2); the first
    /// coordinate is the scalar bound.
    Soc(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::Nonneg(d) | Cone::Soc(d) => d,
        }
    }

    /// Barrier degree contributed to the complementarity measure.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::Zero(_) => 0,
            Cone::Nonneg(d) => d,
            Cone::Soc(_) => 1,
        }
    }
}

/// Per-cone scaling state for the current iterate.
#[derive(Debug, Clone)]
enum Scaling {
    Zero,
    Nonneg {
        w: Vec<f64>,
    },
    /// Dense NT scaling matrix `W` and its inverse, row-major.
    Soc {
        w: Vec<f64>,
        winv: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct ConeSet {
    pub cones: Vec<Cone>,
    pub ranges: Vec<Range<usize>>,
    pub dim: usize,
    pub degree: usize,
    scalings: Vec<Scaling>,
}

impl ConeSet {
    pub fn new(cones: Vec<Cone>) -> Self {
        let mut ranges = Vec::with_capacity(cones.len());
        let mut off = 0;
        for c in &cones {
            ranges.push(off..off + c.dim());
            off += c.dim();
        }
        let degree = cones.iter().map(Cone::degree).sum();
        let scalings = cones
            .iter()
            .map(|c| match *c {
                Cone::Zero(_) => Scaling::Zero,
                Cone::Nonneg(d) => Scaling::Nonneg { w: vec![1.0; d] },
                Cone::Soc(d) => Scaling::Soc {
                    w: identity(d),
                    winv: identity(d),
                },
            })
            .collect();
        Self {
            cones,
            ranges,
            dim: off,
            degree,
            scalings,
        }
    }

    /// Rows that belong to the zero cone.
    pub fn is_zero_row(&self) -> Vec<bool> {
        let mut flags = vec![false; self.dim];
        for (c, r) in self.cones.iter().zip(&self.ranges) {
            if matches!(c, Cone::Zero(_)) {
                flags[r.clone()].iter_mut().for_each(|f| *f = true);
            }
        }
        flags
    }

    /// Smallest "eigenvalue" over all non-zero cones (∞ if there are none).
    pub fn min_eig(&self, v: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for (c, r) in self.cones.iter().zip(&self.ranges) {
            let vc = &v[r.clone()];
            match c {
                Cone::Zero(_) => {}
                Cone::Nonneg(_) => m = vc.iter().fold(m, |a, &b| a.min(b)),
                Cone::Soc(_) => m = m.min(vc[0] - norm2(&vc[1..])),
            }
        }
        m
    }

    /// Pushes `v` into the interior of every non-zero cone and zeroes the
    /// zero-cone entries of a slack vector when `slack` is set.
    pub fn shift_to_interior(&self, v: &mut [f64], slack: bool) {
        for (c, r) in self.cones.iter().zip(&self.ranges) {
            let vc = &mut v[r.clone()];
            match c {
                Cone::Zero(_) => {
                    if slack {
                        vc.iter_mut().for_each(|x| *x = 0.0);
                    }
                }
                Cone::Nonneg(_) => {
                    let m = vc.iter().fold(f64::INFINITY, |a, &b| a.min(b));
                    if m <= 0.0 {
                        vc.iter_mut().for_each(|x| *x += 1.0 - m);
                    }
                }
                Cone::Soc(_) => {
                    let m = vc[0] - norm2(&vc[1..]);
                    if m <= 0.0 {
                        vc[0] += 1.0 - m;
                    }
                }
            }
        }
    }

    /// Recomputes NT scalings for interior `s`, `z`; writes `λ = W z`.
    pub fn update_scaling(&mut self, s: &[f64], z: &[f64], lambda: &mut [f64]) {
        for ((c, r), sc) in self.cones.iter().zip(&self.ranges).zip(self.scalings.iter_mut()) {
            let (sc_s, sc_z) = (&s[r.clone()], &z[r.clone()]);
            let lam = &mut lambda[r.clone()];
            match (c, sc) {
                (Cone::Zero(_), _) => lam.iter_mut().for_each(|x| *x = 0.0),
                (Cone::Nonneg(_), Scaling::Nonneg { w }) => {
                    for i in 0..sc_s.len() {
                        w[i] = (sc_s[i] / sc_z[i]).sqrt();
                        lam[i] = (sc_s[i] * sc_z[i]).sqrt();
                    }
                }
                (Cone::Soc(d), Scaling::Soc { w, winv }) => {
                    soc_nt_scaling(*d, sc_s, sc_z, w, winv);
                    dense_mul(*d, w, sc_z, lam);
                }
                _ => unreachable!("scaling kind mismatch"),
            }
        }
    }

    /// `out = W v`
    pub fn mul_w(&self, v: &[f64], out: &mut [f64]) {
        self.apply(v, out, false);
    }

    /// `out = W⁻¹ v`
    pub fn mul_winv(&self, v: &[f64], out: &mut [f64]) {
        self.apply(v, out, true);
    }

    fn apply(&self, v: &[f64], out: &mut [f64], inverse: bool) {
        for (r, sc) in self.ranges.iter().zip(&self.scalings) {
            let (vc, oc) = (&v[r.clone()], &mut out[r.clone()]);
            match sc {
                Scaling::Zero => oc.iter_mut().for_each(|x| *x = 0.0),
                Scaling::Nonneg { w } => {
                    for i in 0..vc.len() {
                        oc[i] = if inverse { vc[i] / w[i] } else { vc[i] * w[i] };
                    }
                }
                Scaling::Soc { w, winv } => {
                    let m = if inverse { winv } else { w };
                    dense_mul(vc.len(), m, vc, oc);
                }
            }
        }
    }

    /// Entries of `H = WᵀW` for the KKT block, in the order produced by
    /// [`ConeSet::hessian_pattern`].
    pub fn hessian_values(&self, out: &mut Vec<f64>) {
        out.clear();
        for (r, sc) in self.ranges.iter().zip(&self.scalings) {
            match sc {
                Scaling::Zero => out.extend(std::iter::repeat_n(0.0, r.len())),
                Scaling::Nonneg { w } => out.extend(w.iter().map(|x| x * x)),
                Scaling::Soc { w, .. } => {
                    let d = r.len();
                    for j in 0..d {
                        for i in 0..=j {
                            let mut acc = 0.0;
                            for k in 0..d {
                                acc += w[i * d + k] * w[k * d + j];
                            }
                            out.push(acc);
                        }
                    }
                }
            }
        }
    }

    /// Upper-triangular `(row, col)` pattern of the block-diagonal `H`,
    /// relative to the start of the slack vector. Column-major within each
    /// cone block.
    pub fn hessian_pattern(&self) -> Vec<(usize, usize)> {
        let mut pat = Vec::new();
        for (c, r) in self.cones.iter().zip(&self.ranges) {
            match c {
                Cone::Zero(_) | Cone::Nonneg(_) => pat.extend(r.clone().map(|i| (i, i))),
                Cone::Soc(_) => {
                    for j in r.clone() {
                        for i in r.start..=j {
                            pat.push((i, j));
                        }
                    }
                }
            }
        }
        pat
    }

    /// Jordan product `out = u ∘ v`.
    pub fn circ(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        for (c, r) in self.cones.iter().zip(&self.ranges) {
            let (uc, vc) = (&u[r.clone()], &v[r.clone()]);
            let oc = &mut out[r.clone()];
            match c {
                Cone::Zero(_) => oc.iter_mut().for_each(|x| *x = 0.0),
                Cone::Nonneg(_) => {
                    for i in 0..uc.len() {
                        oc[i] = uc[i] * vc[i];
                    }
                }
                Cone::Soc(_) => {
                    oc[0] = uc.iter().zip(vc).map(|(a, b)| a * b).sum();
                    for i in 1..uc.len() {
                        oc[i] = uc[0] * vc[i] + vc[0] * uc[i];
                    }
                }
            }
        }
    }

    /// Solves `λ ∘ out = v` for `out`.
    pub fn inv_circ(&self, lambda: &[f64], v: &[f64], out: &mut [f64]) {
        for (c, r) in self.cones.iter().zip(&self.ranges) {
            let (lc, vc) = (&lambda[r.clone()], &v[r.clone()]);
            let oc = &mut out[r.clone()];
            match c {
                Cone::Zero(_) => oc.iter_mut().for_each(|x| *x = 0.0),
                Cone::Nonneg(_) => {
                    for i in 0..lc.len() {
                        oc[i] = vc[i] / lc[i];
                    }
                }
                Cone::Soc(_) => {
                    let rho = lc[0] * lc[0] - lc[1..].iter().map(|x| x * x).sum::<f64>();
                    let l1v1: f64 = lc[1..].iter().zip(&vc[1..]).map(|(a, b)| a * b).sum();
                    let x0 = (lc[0] * vc[0] - l1v1) / rho;
                    oc[0] = x0;
                    for i in 1..lc.len() {
                        oc[i] = (vc[i] - x0 * lc[i]) / lc[0];
                    }
                }
            }
        }
    }

    /// Adds `alpha * e` (the cone identity) to `v`.
    pub fn add_identity(&self, alpha: f64, v: &mut [f64]) {
        for (c, r) in self.cones.iter().zip(&self.ranges) {
            match c {
                Cone::Zero(_) => {}
                Cone::Nonneg(_) => v[r.clone()].iter_mut().for_each(|x| *x += alpha),
                Cone::Soc(_) => v[r.start] += alpha,
            }
        }
    }

    /// Largest step in `[0, amax]` keeping `v + α dv` in the cone product.
    pub fn max_step(&self, v: &[f64], dv: &[f64], amax: f64) -> f64 {
        let mut alpha = amax;
        for (c, r) in self.cones.iter().zip(&self.ranges) {
            let (vc, dc) = (&v[r.clone()], &dv[r.clone()]);
            match c {
                Cone::Zero(_) => {}
                Cone::Nonneg(_) => {
                    for i in 0..vc.len() {
                        if dc[i] < 0.0 {
                            alpha = alpha.min(-vc[i] / dc[i]);
                        }
                    }
                }
                Cone::Soc(_) => alpha = alpha.min(soc_step(vc, dc, amax)),
            }
        }
        alpha.max(0.0)
    }

    /// Distance of `v` from the cone product, measured as the worst negative
    /// eigenvalue (0 if `v` is in the cone). Zero-cone rows count their
    /// absolute value when `slack` is set and are ignored otherwise (dual).
    pub fn violation(&self, v: &[f64], slack: bool) -> f64 {
        let mut worst: f64 = 0.0;
        for (c, r) in self.cones.iter().zip(&self.ranges) {
            let vc = &v[r.clone()];
            match c {
                Cone::Zero(_) => {
                    if slack {
                        worst = vc.iter().fold(worst, |m, x| m.max(x.abs()));
                    }
                }
                Cone::Nonneg(_) => worst = vc.iter().fold(worst, |m, &x| m.max(-x)),
                Cone::Soc(_) => worst = worst.max(norm2(&vc[1..]) - vc[0]),
            }
        }
        worst
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dense_mul(d: usize, m: &[f64], v: &[f64], out: &mut [f64]) {
    for i in 0..d {
        out[i] = (0..d).map(|k| m[i * d + k] * v[k]).sum();
    }
}

fn soc_det(v: &[f64]) -> f64 {
    // (v0 - ‖v1‖)(v0 + ‖v1‖), computed in factored form for accuracy.
    let n1 = norm2(&v[1..]);
    (v[0] - n1) * (v[0] + n1)
}

fn soc_nt_scaling(d: usize, s: &[f64], z: &[f64], w: &mut [f64], winv: &mut [f64]) {
    let s_scale = soc_det(s).max(f64::MIN_POSITIVE).sqrt();
    let z_scale = soc_det(z).max(f64::MIN_POSITIVE).sqrt();
    let sbar: Vec<f64> = s.iter().map(|x| x / s_scale).collect();
    let zbar: Vec<f64> = z.iter().map(|x| x / z_scale).collect();
    let sz: f64 = sbar.iter().zip(&zbar).map(|(a, b)| a * b).sum();
    let gamma = ((1.0 + sz) / 2.0).sqrt();
    let mut wbar = vec![0.0; d];
    wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
    for i in 1..d {
        wbar[i] = (sbar[i] - zbar[i]) / (2.0 * gamma);
    }
    let eta = (s_scale / z_scale).sqrt();
    let w0 = wbar[0];
    let denom = 1.0 + w0;
    w[0] = eta * w0;
    winv[0] = w0 / eta;
    for i in 1..d {
        w[i] = eta * wbar[i];
        w[i * d] = eta * wbar[i];
        winv[i] = -wbar[i] / eta;
        winv[i * d] = -wbar[i] / eta;
        for j in 1..d {
            let base = wbar[i] * wbar[j] / denom + if i == j { 1.0 } else { 0.0 };
            w[i * d + j] = eta * base;
            winv[i * d + j] = base / eta;
        }
    }
}

fn soc_step(v: &[f64], dv: &[f64], amax: f64) -> f64 {
    let mut alpha = amax;
    if dv[0] < 0.0 {
        alpha = alpha.min(-v[0] / dv[0]);
    }
    let a = dv[0] * dv[0] - dv[1..].iter().map(|x| x * x).sum::<f64>();
    let b = 2.0 * (v[0] * dv[0] - v[1..].iter().zip(&dv[1..]).map(|(x, y)| x * y).sum::<f64>());
    let c = soc_det(v).max(0.0);
    let mut roots = [f64::INFINITY; 2];
    if a.abs() < 1e-300 {
        if b < 0.0 {
            roots[0] = -c / b;
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            roots = [q / a, if q != 0.0 { c / q } else { f64::INFINITY }];
        }
    }
    for r in roots {
        if r > 0.0 {
            alpha = alpha.min(r);
        }
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nt_scaling_maps_z_and_s_to_same_point() {
        let mut k = ConeSet::new(vec![Cone::Soc(3), Cone::Nonneg(2)]);
        let s = [3.0, 1.0, -0.5, 2.0, 0.5];
        let z = [2.0, -0.3, 0.8, 1.5, 4.0];
        let mut lam = vec![0.0; 5];
        k.update_scaling(&s, &z, &mut lam);
        let mut winv_s = vec![0.0; 5];
        k.mul_winv(&s, &mut winv_s);
        for (a, b) in lam.iter().zip(&winv_s) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // W W⁻¹ = I
        let mut back = vec![0.0; 5];
        k.mul_w(&winv_s, &mut back);
        for (a, b) in back.iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jordan_inverse_roundtrip() {
        let k = ConeSet::new(vec![Cone::Soc(3), Cone::Nonneg(1)]);
        let lam = [2.0, 0.5, -0.7, 3.0];
        let v = [1.0, -2.0, 0.25, 6.0];
        let mut x = [0.0; 4];
        k.inv_circ(&lam, &v, &mut x);
        let mut back = [0.0; 4];
        k.circ(&lam, &x, &mut back);
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn soc_step_hits_boundary() {
        let k = ConeSet::new(vec![Cone::Soc(3)]);
        // v = (1, 0, 0), dv = (0, 1, 0): boundary at α = 1.
        let a = k.max_step(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], 10.0);
        assert!((a - 1.0).abs() < 1e-12);
        // Moving inward never leaves the cone.
        let a = k.max_step(&[1.0, 0.0, 0.0], &[1.0, 0.5, 0.0], 10.0);
        assert_eq!(a, 10.0);
    }
}
