//! Gaussian-kernel field evaluation: direct sums and truncated Hermite and
//! Taylor box expansions.
//!
//! The field of weighted sources `s_j` at a target `t` is
//! `u(t) = sum_j w_j exp(-|t - s_j|^2 / delta)`. Both expansions work in the
//! scaled coordinates `(x - center) / sqrt(delta)` and are truncated to the
//! multi-index cuboid `0 <= alpha <= cutoff`.

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Triple of non-negative exponents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex(pub [u32; 3]);

impl MultiIndex {
    pub const fn new(n1: u32, n2: u32, n3: u32) -> Self {
        MultiIndex([n1, n2, n3])
    }

    pub const fn uniform(n: u32) -> Self {
        MultiIndex([n, n, n])
    }

    /// `|alpha| = n1 + n2 + n3`
    pub fn abs(self) -> u32 {
        self.0.iter().sum()
    }

    /// `alpha! = n1! n2! n3!`
    pub fn factorial(self) -> u64 {
        self.0.iter().map(|&n| (1..=u64::from(n)).product::<u64>()).product()
    }

    /// `t^alpha = x^n1 y^n2 z^n3`
    pub fn pow(self, t: Vec3) -> f64 {
        (0..3).map(|i| t[i].powi(self.0[i] as i32)).product()
    }

    /// Number of multi-indices in `0 <= alpha <= self`.
    pub fn block_len(self) -> usize {
        self.0.iter().map(|&n| n as usize + 1).product()
    }

    /// All `alpha` with `0 <= alpha <= self`, last component fastest.
    pub fn block(self) -> impl Iterator<Item = MultiIndex> {
        let [a, b, c] = self.0;
        (0..=a).flat_map(move |i| (0..=b).flat_map(move |j| (0..=c).map(move |k| MultiIndex([i, j, k]))))
    }

    /// Componentwise maximum of the three entries.
    pub fn max_component(self) -> u32 {
        self.0.into_iter().max().unwrap_or(0)
    }
}

/// One-dimensional Hermite function `h_n(x) = (-1)^n d^n/dx^n exp(-x^2)`.
pub fn hermite_fn(n: u32, x: f64) -> f64 {
    let mut out = vec![0.0; n as usize + 1];
    hermite_table(x, &mut out);
    out[n as usize]
}

/// Fills `out[n] = h_n(x)` for `n < out.len()` via
/// `h_{n+1} = 2x h_n - 2n h_{n-1}`.
pub fn hermite_table(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = (-x * x).exp();
    if out.len() > 1 {
        out[1] = 2.0 * x * out[0];
    }
    for n in 1..out.len().saturating_sub(1) {
        out[n + 1] = 2.0 * x * out[n] - 2.0 * n as f64 * out[n - 1];
    }
}

/// Product Hermite function `h(alpha, t) = h_{n1}(x) h_{n2}(y) h_{n3}(z)`.
pub fn hermite_h(alpha: MultiIndex, t: Vec3) -> f64 {
    (0..3).map(|i| hermite_fn(alpha.0[i], t[i])).product()
}

fn power_table(x: f64, out: &mut [f64]) {
    let mut p = 1.0;
    for v in out.iter_mut() {
        *v = p;
        p *= x;
    }
}

/// How the kernel exponent is scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExponentScale {
    /// `exp(-d^2 / sigma^2)`
    #[default]
    SigmaSquared,
    /// `exp(-d^2 / sigma)`, for sensitivity checks.
    Sigma,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub sigma: f64,
    /// Denominator of the exponent.
    pub delta: f64,
    pub cutoff: MultiIndex,
}

impl KernelParams {
    pub const DEFAULT_CUTOFF: MultiIndex = MultiIndex::uniform(3);

    pub fn new(sigma: f64) -> Self {
        Self::with_scale(sigma, ExponentScale::SigmaSquared)
    }

    pub fn with_scale(sigma: f64, scale: ExponentScale) -> Self {
        let delta = match scale {
            ExponentScale::SigmaSquared => sigma * sigma,
            ExponentScale::Sigma => sigma,
        };
        KernelParams {
            sigma,
            delta,
            cutoff: Self::DEFAULT_CUTOFF,
        }
    }

    pub fn with_cutoff(mut self, cutoff: MultiIndex) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta", "must be positive"));
        }
        Ok(())
    }

    /// Length unit of the scaled coordinates.
    pub fn scale(&self) -> f64 {
        self.delta.sqrt()
    }

    pub fn kernel(&self, t: Vec3, s: Vec3) -> f64 {
        (-t.distance_squared(s) / self.delta).exp()
    }
}

/// Weighted points: sources carry vacant-dendrite counts, targets vacant axons.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    pub positions: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl PointSet {
    pub fn new(positions: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        if positions.len() != weights.len() {
            return Err(Error::invalid(
                "weights",
                format!("{} weights for {} positions", weights.len(), positions.len()),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("weights", "must be non-negative"));
        }
        Ok(PointSet { positions, weights })
    }

    pub fn with_capacity(n: usize) -> Self {
        PointSet {
            positions: Vec::with_capacity(n),
            weights: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, position: Vec3, weight: f64) {
        self.positions.push(position);
        self.weights.push(weight);
    }

    pub fn clear(&mut self) {
        self.positions.clear();
        self.weights.clear();
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Weighted mean position; `None` if the total weight is zero.
    pub fn centroid(&self) -> Option<Vec3> {
        let w = self.total_weight();
        (w > 0.0).then(|| {
            self.positions
                .iter()
                .zip(&self.weights)
                .fold(Vec3::ZERO, |acc, (p, &wi)| acc + *p * wi)
                / w
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec3, f64)> + '_ {
        self.positions.iter().copied().zip(self.weights.iter().copied())
    }
}

/// `u(t_i) = sum_j w_j exp(-|t_i - s_j|^2 / delta)`, evaluated pairwise.
pub fn direct_field(sources: &PointSet, targets: &[Vec3], k: &KernelParams) -> Vec<f64> {
    targets
        .iter()
        .map(|&t| sources.iter().map(|(s, w)| w * k.kernel(t, s)).sum())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExpansionKind {
    Hermite,
    Taylor,
}

/// Dense coefficient block over `0 <= alpha <= cutoff` (last index fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionCoefficients {
    pub kind: ExpansionKind,
    pub center: Vec3,
    pub cutoff: MultiIndex,
    pub values: Vec<f64>,
}

impl ExpansionCoefficients {
    pub fn get(&self, alpha: MultiIndex) -> f64 {
        let [_, b, c] = self.cutoff.0;
        let [i, j, l] = alpha.0;
        self.values[((i * (b + 1) + j) * (c + 1) + l) as usize]
    }

    /// The same series cut at a smaller `cutoff`; coefficients do not depend
    /// on where the series is cut.
    pub fn truncated(&self, cutoff: MultiIndex) -> ExpansionCoefficients {
        assert!(
            (0..3).all(|i| cutoff.0[i] <= self.cutoff.0[i]),
            "cutoff {cutoff:?} exceeds {:?}",
            self.cutoff
        );
        ExpansionCoefficients {
            kind: self.kind,
            center: self.center,
            cutoff,
            values: cutoff.block().map(|a| self.get(a)).collect(),
        }
    }

    pub fn evaluate(&self, targets: &[Vec3], k: &KernelParams) -> Vec<f64> {
        match self.kind {
            ExpansionKind::Hermite => hermite_evaluate(self, targets, k),
            ExpansionKind::Taylor => taylor_evaluate(self, targets, k),
        }
    }
}

/// Per-axis tables for one point, `tables[axis][n]`.
struct AxisTables {
    data: [[f64; 16]; 3],
}

const MAX_CUTOFF: u32 = 15;

impl AxisTables {
    fn fill(scaled: Vec3, cutoff: MultiIndex, f: fn(f64, &mut [f64])) -> Self {
        let mut data = [[0.0; 16]; 3];
        for (axis, row) in data.iter_mut().enumerate() {
            f(scaled[axis], &mut row[..=cutoff.0[axis] as usize]);
        }
        AxisTables { data }
    }

    /// Calls `visit(flat_index, product)` over the block.
    #[inline]
    fn for_each_product(&self, cutoff: MultiIndex, mut visit: impl FnMut(usize, f64)) {
        let [a, b, c] = cutoff.0;
        let mut idx = 0;
        for i in 0..=a as usize {
            let x = self.data[0][i];
            for j in 0..=b as usize {
                let xy = x * self.data[1][j];
                for l in 0..=c as usize {
                    visit(idx, xy * self.data[2][l]);
                    idx += 1;
                }
            }
        }
    }
}

fn check_cutoff(cutoff: MultiIndex) -> Result<()> {
    if cutoff.max_component() > MAX_CUTOFF {
        return Err(Error::invalid("cutoff", format!("components above {MAX_CUTOFF} are not supported")));
    }
    Ok(())
}

fn inverse_factorials(cutoff: MultiIndex) -> Vec<f64> {
    cutoff.block().map(|a| 1.0 / a.factorial() as f64).collect()
}

/// Hermite coefficients `A_alpha = (1/alpha!) sum_j w_j ((s_j - s_c)/sqrt(delta))^alpha`
/// about the source center `s_c`.
pub fn hermite_expand(sources: &PointSet, center: Vec3, k: &KernelParams) -> Result<ExpansionCoefficients> {
    if sources.is_empty() {
        return Err(Error::EmptySources);
    }
    check_cutoff(k.cutoff)?;
    let scale = k.scale();
    let mut values = vec![0.0; k.cutoff.block_len()];
    for (s, w) in sources.iter() {
        let t = AxisTables::fill((s - center) / scale, k.cutoff, power_table);
        t.for_each_product(k.cutoff, |i, v| values[i] += w * v);
    }
    for (v, f) in values.iter_mut().zip(inverse_factorials(k.cutoff)) {
        *v *= f;
    }
    Ok(ExpansionCoefficients {
        kind: ExpansionKind::Hermite,
        center,
        cutoff: k.cutoff,
        values,
    })
}

/// `u(t) = sum_alpha A_alpha h(alpha, (t - s_c)/sqrt(delta))`
pub fn hermite_evaluate(coeffs: &ExpansionCoefficients, targets: &[Vec3], k: &KernelParams) -> Vec<f64> {
    debug_assert_eq!(coeffs.kind, ExpansionKind::Hermite);
    let scale = k.scale();
    targets
        .iter()
        .map(|&t| {
            let tables = AxisTables::fill((t - coeffs.center) / scale, coeffs.cutoff, hermite_table);
            let mut u = 0.0;
            tables.for_each_product(coeffs.cutoff, |i, h| u += coeffs.values[i] * h);
            u
        })
        .collect()
}

/// Taylor coefficients about the target center `t_c`:
/// `B_beta = (1/beta!) sum_j w_j h(beta, (s_j - t_c)/sqrt(delta))`.
///
/// Since `h_n(-x) = (-1)^n h_n(x)` this is the same as
/// `((-1)^|beta| / beta!) sum_j w_j h(beta, (t_c - s_j)/sqrt(delta))`.
pub fn taylor_expand(sources: &PointSet, center: Vec3, k: &KernelParams) -> Result<ExpansionCoefficients> {
    if sources.is_empty() {
        return Err(Error::EmptySources);
    }
    check_cutoff(k.cutoff)?;
    let scale = k.scale();
    let mut values = vec![0.0; k.cutoff.block_len()];
    for (s, w) in sources.iter() {
        let t = AxisTables::fill((s - center) / scale, k.cutoff, hermite_table);
        t.for_each_product(k.cutoff, |i, v| values[i] += w * v);
    }
    for (v, f) in values.iter_mut().zip(inverse_factorials(k.cutoff)) {
        *v *= f;
    }
    Ok(ExpansionCoefficients {
        kind: ExpansionKind::Taylor,
        center,
        cutoff: k.cutoff,
        values,
    })
}

/// `u(t) = sum_beta B_beta ((t - t_c)/sqrt(delta))^beta`
pub fn taylor_evaluate(coeffs: &ExpansionCoefficients, targets: &[Vec3], k: &KernelParams) -> Vec<f64> {
    debug_assert_eq!(coeffs.kind, ExpansionKind::Taylor);
    let scale = k.scale();
    targets
        .iter()
        .map(|&t| {
            let tables = AxisTables::fill((t - coeffs.center) / scale, coeffs.cutoff, power_table);
            let mut u = 0.0;
            tables.for_each_product(coeffs.cutoff, |i, p| u += coeffs.values[i] * p);
            u
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn multi_index_operations() {
        assert_eq!(MultiIndex::new(1, 2, 3).abs(), 6);
        assert_eq!(MultiIndex::new(2, 1, 0).factorial(), 2);
        assert_eq!(MultiIndex::new(1, 0, 2).pow(Vec3::new(2.0, 3.0, 4.0)), 32.0);
        assert_eq!(MultiIndex::uniform(3).block().count(), 64);
        assert_eq!(MultiIndex::new(0, 1, 2).block_len(), 6);
    }

    #[test]
    fn hermite_function_values() {
        assert_eq!(hermite_h(MultiIndex::default(), Vec3::ZERO), 1.0);
        assert!((hermite_fn(1, 1.0) - 2.0 / E).abs() < 1e-15);
        assert!((hermite_fn(1, 1.0) - 0.735759).abs() < 1e-6);
        assert_eq!(hermite_fn(2, 0.0), -2.0);
        // h_3(x) = (8x^3 - 12x) e^{-x^2}
        let x: f64 = 0.37;
        let expect = (8.0 * x * x * x - 12.0 * x) * (-x * x).exp();
        assert!((hermite_fn(3, x) - expect).abs() < 1e-15);
    }

    #[test]
    fn direct_field_examples() {
        let k = KernelParams::new(750.0);
        let one = PointSet::new(vec![Vec3::new(1.0, 2.0, 3.0)], vec![1.0]).unwrap();
        assert_eq!(direct_field(&one, &[Vec3::new(1.0, 2.0, 3.0)], &k), vec![1.0]);
        let at_sigma = direct_field(&one, &[Vec3::new(751.0, 2.0, 3.0)], &k)[0];
        assert!((at_sigma - (-1.0f64).exp()).abs() < 1e-15);
        let two = PointSet::new(vec![Vec3::new(750.0, 0.0, 0.0), Vec3::new(0.0, 1500.0, 0.0)], vec![1.0, 1.0]).unwrap();
        let u = direct_field(&two, &[Vec3::ZERO], &k)[0];
        assert!((u - 0.386195).abs() < 1e-6);
    }

    #[test]
    fn exponent_scale_switch() {
        let k = KernelParams::with_scale(4.0, ExponentScale::Sigma);
        assert_eq!(k.delta, 4.0);
        assert!((k.kernel(Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0)) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn hermite_single_source_at_center() {
        let k = KernelParams::new(750.0);
        let c = Vec3::new(10.0, 20.0, 30.0);
        let src = PointSet::new(vec![c], vec![1.0]).unwrap();
        let a = hermite_expand(&src, c, &k).unwrap();
        assert_eq!(a.get(MultiIndex::default()), 1.0);
        assert!(a.values.iter().skip(1).all(|&v| v == 0.0));
        let t = Vec3::new(300.0, -100.0, 45.0);
        let u = hermite_evaluate(&a, &[t], &k)[0];
        assert!((u - k.kernel(t, c)).abs() < 1e-15);
    }

    #[test]
    fn symmetric_sources_cancel_odd_coefficients() {
        let k = KernelParams::new(750.0);
        let src = PointSet::new(vec![Vec3::new(-50.0, 0.0, 0.0), Vec3::new(50.0, 0.0, 0.0)], vec![2.0, 2.0]).unwrap();
        let a = hermite_expand(&src, Vec3::ZERO, &k).unwrap();
        for n in [1, 3] {
            assert!(a.get(MultiIndex::new(n, 0, 0)).abs() < 1e-15);
        }
        assert!(a.get(MultiIndex::new(2, 0, 0)) > 0.0);
    }

    #[test]
    fn monopole_truncation() {
        let k = KernelParams::new(750.0).with_cutoff(MultiIndex::default());
        let src = PointSet::new(vec![Vec3::new(-30.0, 10.0, 0.0), Vec3::new(30.0, -10.0, 0.0)], vec![1.0, 3.0]).unwrap();
        let c = src.centroid().unwrap();
        let a = hermite_expand(&src, c, &k).unwrap();
        let t = Vec3::new(400.0, 0.0, 0.0);
        let u = hermite_evaluate(&a, &[t], &k)[0];
        assert!((u - 4.0 * k.kernel(t, c)).abs() < 1e-12);
    }

    #[test]
    fn taylor_single_source_at_center() {
        let k = KernelParams::new(750.0);
        let c = Vec3::new(5.0, 5.0, 5.0);
        let src = PointSet::new(vec![c], vec![1.0]).unwrap();
        let b = taylor_expand(&src, c, &k).unwrap();
        for beta in k.cutoff.block() {
            let sign = if beta.abs() % 2 == 0 { 1.0 } else { -1.0 };
            let expect = sign / beta.factorial() as f64 * hermite_h(beta, Vec3::ZERO);
            assert!((b.get(beta) - expect).abs() < 1e-15);
        }
        assert_eq!(b.get(MultiIndex::default()), 1.0);
    }

    #[test]
    fn taylor_at_center_is_leading_coefficient() {
        let k = KernelParams::new(750.0);
        let src = PointSet::new(vec![Vec3::new(400.0, 0.0, 0.0), Vec3::new(0.0, 300.0, 100.0)], vec![2.0, 1.0]).unwrap();
        let tc = Vec3::new(10.0, 10.0, 10.0);
        let b = taylor_expand(&src, tc, &k).unwrap();
        assert_eq!(taylor_evaluate(&b, &[tc], &k)[0], b.get(MultiIndex::default()));
        let zero = ExpansionCoefficients {
            values: vec![0.0; 64],
            ..b
        };
        assert_eq!(taylor_evaluate(&zero, &[tc, Vec3::ZERO], &k), vec![0.0, 0.0]);
    }

    #[test]
    fn empty_sources_rejected() {
        let k = KernelParams::new(750.0);
        assert!(matches!(hermite_expand(&PointSet::default(), Vec3::ZERO, &k), Err(Error::EmptySources)));
        assert!(matches!(taylor_expand(&PointSet::default(), Vec3::ZERO, &k), Err(Error::EmptySources)));
    }

    #[test]
    fn point_set_rejects_mismatched_lengths() {
        assert!(PointSet::new(vec![Vec3::ZERO], vec![]).is_err());
        assert!(PointSet::new(vec![Vec3::ZERO], vec![-1.0]).is_err());
    }
}
