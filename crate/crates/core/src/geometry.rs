//! Three-dimensional points and axis-aligned cubic cells.

use std::ops::{Add, AddAssign, Div, Index, Mul, Sub};

/// A point or displacement in simulation length units.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn splat(v: f64) -> Self {
        Vec3([v; 3])
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance_squared(self, other: Vec3) -> f64 {
        (self - other).norm_squared()
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn x(self) -> f64 {
        self.0[0]
    }

    pub fn y(self) -> f64 {
        self.0[1]
    }

    pub fn z(self) -> f64 {
        self.0[2]
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for Vec3 {
    type Output = Vec3;

    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;

    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;

    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;

    fn div(self, s: f64) -> Vec3 {
        Vec3([self.0[0] / s, self.0[1] / s, self.0[2] / s])
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3(a)
    }
}

/// Axis-aligned cube given by its minimum corner and side length.
///
/// Cells are half-open, `[min, min + side)` on every axis, so the eight
/// children produced by [`Cell::child`] partition their parent exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub min: Vec3,
    pub side: f64,
}

impl Cell {
    pub fn new(min: Vec3, side: f64) -> Self {
        Cell { min, side }
    }

    /// Cube `[0, side)^3`.
    pub fn cube(side: f64) -> Self {
        Cell::new(Vec3::ZERO, side)
    }

    pub fn center(&self) -> Vec3 {
        self.min + Vec3::splat(self.side * 0.5)
    }

    /// Membership in the closed cube. Points on the upper faces are accepted
    /// and fall into the upper octants.
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.min[i] + self.side)
    }

    /// Octant index of `p`, bit 0 for x, bit 1 for y, bit 2 for z (Morton order).
    pub fn octant(&self, p: Vec3) -> usize {
        let c = self.center();
        (0..3).fold(0, |acc, i| acc | (usize::from(p[i] >= c[i]) << i))
    }

    pub fn child(&self, octant: usize) -> Cell {
        let half = self.side * 0.5;
        let offset = Vec3::new(
            if octant & 1 != 0 { half } else { 0.0 },
            if octant & 2 != 0 { half } else { 0.0 },
            if octant & 4 != 0 { half } else { 0.0 },
        );
        Cell::new(self.min + offset, half)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_partition_parent() {
        let cell = Cell::new(Vec3::new(-1.0, 2.0, 0.5), 4.0);
        let probes = [
            Vec3::new(-1.0, 2.0, 0.5),
            Vec3::new(0.999, 3.999, 2.499),
            Vec3::new(1.0, 4.0, 2.5),
            Vec3::new(2.9, 5.9, 4.4),
            Vec3::new(-0.5, 5.0, 4.0),
        ];
        for p in probes {
            let hits: Vec<usize> = (0..8)
                .filter(|&o| {
                    let c = cell.child(o);
                    (0..3).all(|i| p[i] >= c.min[i] && p[i] < c.min[i] + c.side)
                })
                .collect();
            assert_eq!(hits, vec![cell.octant(p)], "probe {p:?}");
        }
    }

    #[test]
    fn octant_bits_follow_axes() {
        let cell = Cell::cube(2.0);
        assert_eq!(cell.octant(Vec3::new(0.5, 0.5, 0.5)), 0);
        assert_eq!(cell.octant(Vec3::new(1.5, 0.5, 0.5)), 1);
        assert_eq!(cell.octant(Vec3::new(0.5, 1.5, 0.5)), 2);
        assert_eq!(cell.octant(Vec3::new(0.5, 0.5, 1.5)), 4);
        assert_eq!(cell.octant(Vec3::new(1.5, 1.5, 1.5)), 7);
    }
}
