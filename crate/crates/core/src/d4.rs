//! The eight symmetries of the square (dihedral group D4).
//!
//! An element is "optional mirror, then rotate by a multiple of 90 degrees
//! counter-clockwise", acting on coordinates measured from the square's
//! center with `x` to the right and `y` up. The same element acts on clips
//! (contact centers) and on raster images (pixel centers), which is what makes
//! aerial-image simulation equivariant under augmentation.

use std::fmt;

/// A D4 element, encoded as `mirror * 4 + quarter_turns`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct D4(u8);

impl D4 {
    pub const IDENTITY: D4 = D4(0);
    pub const ROT90: D4 = D4(1);
    pub const ROT180: D4 = D4(2);
    pub const ROT270: D4 = D4(3);
    pub const MIRROR_X: D4 = D4(4);

    pub fn new(mirror: bool, quarter_turns: u8) -> Self {
        D4(u8::from(mirror) * 4 + quarter_turns % 4)
    }

    pub fn from_code(code: u8) -> Option<Self> {
        (code < 8).then_some(D4(code))
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn mirrored(self) -> bool {
        self.0 >= 4
    }

    pub fn quarter_turns(self) -> u8 {
        self.0 % 4
    }

    /// All eight elements, identity first.
    pub fn all() -> [D4; 8] {
        [0, 1, 2, 3, 4, 5, 6, 7].map(D4)
    }

    /// Action on a centered integer coordinate pair.
    pub fn apply_i64(self, (mut x, mut y): (i64, i64)) -> (i64, i64) {
        if self.mirrored() {
            x = -x;
        }
        for _ in 0..self.quarter_turns() {
            (x, y) = (-y, x);
        }
        (x, y)
    }

    pub fn apply_f64(self, (mut x, mut y): (f64, f64)) -> (f64, f64) {
        if self.mirrored() {
            x = -x;
        }
        for _ in 0..self.quarter_turns() {
            (x, y) = (-y, x);
        }
        (x, y)
    }

    /// `self.then(other)` applies `self` first, then `other`.
    pub fn then(self, other: D4) -> D4 {
        let ex = other.apply_i64(self.apply_i64((1, 0)));
        let ey = other.apply_i64(self.apply_i64((0, 1)));
        Self::from_basis(ex, ey)
    }

    pub fn inverse(self) -> D4 {
        D4::all()
            .into_iter()
            .find(|g| self.then(*g) == D4::IDENTITY)
            .expect("every D4 element has an inverse")
    }

    fn from_basis(ex: (i64, i64), ey: (i64, i64)) -> D4 {
        D4::all()
            .into_iter()
            .find(|g| g.apply_i64((1, 0)) == ex && g.apply_i64((0, 1)) == ey)
            .expect("basis images always come from a D4 element")
    }

    /// Transforms a row-major `side x side` raster. Row index grows with `y`.
    pub fn transform_square<T: Copy>(self, data: &[T], side: usize) -> Vec<T> {
        assert_eq!(data.len(), side * side, "raster is not square");
        let s = side as i64;
        let mut out = data.to_vec();
        for i in 0..s {
            for j in 0..s {
                // doubled centered coordinates keep pixel centers integral
                let (u, v) = self.apply_i64((2 * j - (s - 1), 2 * i - (s - 1)));
                let (j2, i2) = ((u + s - 1) / 2, (v + s - 1) / 2);
                out[(i2 * s + j2) as usize] = data[(i * s + j) as usize];
            }
        }
        out
    }
}

impl fmt::Display for D4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = if self.mirrored() { "m" } else { "" };
        write!(f, "{m}r{}", 90 * u32::from(self.quarter_turns()))
    }
}
