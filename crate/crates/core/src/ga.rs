//! Projective geometric algebra Cl(2,0,1).
//!
//! Every multivector is stored as 8 coefficients in the fixed blade order
//!
//! ```text
//! index:  0   1    2    3    4     5     6     7
//! blade:  1   e1   e2   e3   e12   e13   e23   e123
//! ```
//!
//! with `e1² = e2² = 1` and `e3² = 0` (e3 is the projective, degenerate
//! generator). This order is also the on-disk and tensor layout used by every
//! other module in the crate.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Blade names in storage order.
pub const BLADE_NAMES: [&str; 8] = ["1", "e1", "e2", "e3", "e12", "e13", "e23", "e123"];

/// Generator bitmask of each blade (bit 0 = e1, bit 1 = e2, bit 2 = e3).
const BLADE_MASKS: [u8; 8] = [0b000, 0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111];

/// Grade of each blade in storage order.
pub const BLADE_GRADES: [usize; 8] = [0, 1, 1, 1, 2, 2, 2, 3];

/// Square of each generator e1, e2, e3.
const METRIC: [i8; 3] = [1, 1, 0];

/// Blades that contribute to the invariant inner product.
pub const INNER_PRODUCT_SLOTS: [usize; 4] = [0, 1, 2, 4];

pub const SCALAR: usize = 0;
pub const E1: usize = 1;
pub const E2: usize = 2;
pub const E3: usize = 3;
pub const E12: usize = 4;
pub const E13: usize = 5;
pub const E23: usize = 6;
pub const E123: usize = 7;

fn index_of_mask(mask: u8) -> usize {
    BLADE_MASKS
        .iter()
        .position(|&m| m == mask)
        .expect("every 3-bit mask is a blade")
}

/// Product of two basis blades given as generator bitmasks.
///
/// Returns the sign (`-1`, `0` or `1`) and the mask of the resulting blade.
/// The sign counts the transpositions needed to bring the concatenated
/// generator word into canonical (ascending) order, then applies the metric
/// to every generator that appears twice.
fn blade_product(a: u8, b: u8) -> (i8, u8) {
    let mut swaps = 0u32;
    for bit in 0..3 {
        if b & (1 << bit) != 0 {
            // generators of `a` with a higher index must hop over this one
            swaps += (a >> (bit + 1)).count_ones();
        }
    }
    let mut sign: i8 = if swaps % 2 == 0 { 1 } else { -1 };
    let common = a & b;
    for (bit, &sq) in METRIC.iter().enumerate() {
        if common & (1 << bit) != 0 {
            sign *= sq;
        }
    }
    (sign, a ^ b)
}

/// The 8×8×8 structure constants: `f[i][j][k]` is the coefficient of blade
/// `k` in the product `blade_i ⋆ blade_j`.
#[derive(Clone, PartialEq, Eq)]
pub struct StructureTable {
    f: [[[i8; 8]; 8]; 8],
}

impl StructureTable {
    pub fn get(&self, i: usize, j: usize, k: usize) -> i8 {
        self.f[i][j][k]
    }

    /// The single nonzero entry of slice `(i, j)` as `(k, sign)`, if any.
    pub fn entry(&self, i: usize, j: usize) -> Option<(usize, i8)> {
        self.f[i][j]
            .iter()
            .enumerate()
            .find(|(_, &s)| s != 0)
            .map(|(k, &s)| (k, s))
    }

    /// Flattened `[i][j][k]` table as reals, for tensor contraction.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(512);
        for i in 0..8 {
            for j in 0..8 {
                for k in 0..8 {
                    out.push(self.f[i][j][k] as f64);
                }
            }
        }
        out
    }
}

impl fmt::Debug for StructureTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        for i in 0..8 {
            for j in 0..8 {
                if let Some((k, s)) = self.entry(i, j) {
                    list.entry(&format_args!(
                        "{}*{} = {}{}",
                        BLADE_NAMES[i],
                        BLADE_NAMES[j],
                        if s < 0 { "-" } else { "" },
                        BLADE_NAMES[k]
                    ));
                }
            }
        }
        list.finish()
    }
}

/// Generates the structure constants by reducing every pair of blade words.
pub fn build_structure_table() -> StructureTable {
    let mut f = [[[0i8; 8]; 8]; 8];
    for (i, &a) in BLADE_MASKS.iter().enumerate() {
        for (j, &b) in BLADE_MASKS.iter().enumerate() {
            let (sign, mask) = blade_product(a, b);
            if sign != 0 {
                f[i][j][index_of_mask(mask)] = sign;
            }
        }
    }
    StructureTable { f }
}

/// Process-wide structure table, built on first use.
pub fn structure_table() -> &'static StructureTable {
    static TABLE: OnceLock<StructureTable> = OnceLock::new();
    TABLE.get_or_init(build_structure_table)
}

/// Sparse form of the table: for each `(i, j)` the target blade and sign.
fn product_entries() -> &'static [[(usize, f64); 8]; 8] {
    static ENTRIES: OnceLock<[[(usize, f64); 8]; 8]> = OnceLock::new();
    ENTRIES.get_or_init(|| {
        let table = structure_table();
        let mut out = [[(0usize, 0.0f64); 8]; 8];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, slot) in row.iter_mut().enumerate() {
                if let Some((k, s)) = table.entry(i, j) {
                    *slot = (k, s as f64);
                }
            }
        }
        out
    })
}

/// Sign applied to a blade of the given grade by the grade involution.
pub fn involution_sign(grade: usize) -> f64 {
    if grade % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Sign applied to a blade of the given grade by the reverse.
pub fn reverse_sign(grade: usize) -> f64 {
    if (grade * grade.saturating_sub(1) / 2) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// A multivector of Cl(2,0,1).
#[derive(Clone, Copy, PartialEq, Default)]
pub struct Multivector(pub [f64; 8]);

impl Multivector {
    pub const ZERO: Multivector = Multivector([0.0; 8]);
    pub const ONE: Multivector = Multivector([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

    pub fn new(coeffs: [f64; 8]) -> Self {
        Multivector(coeffs)
    }

    pub fn scalar(s: f64) -> Self {
        let mut m = Self::ZERO;
        m.0[SCALAR] = s;
        m
    }

    /// Basis blade by storage index.
    pub fn blade(index: usize) -> Self {
        let mut m = Self::ZERO;
        m.0[index] = 1.0;
        m
    }

    pub fn coeffs(&self) -> &[f64; 8] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn geometric_product(&self, other: &Multivector) -> Multivector {
        let entries = product_entries();
        let mut out = [0.0; 8];
        for (i, &a) in self.0.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.0.iter().enumerate() {
                let (k, s) = entries[i][j];
                out[k] += s * a * b;
            }
        }
        Multivector(out)
    }

    pub fn grade_involution(&self) -> Multivector {
        let mut out = self.0;
        for (c, &g) in out.iter_mut().zip(BLADE_GRADES.iter()) {
            *c *= involution_sign(g);
        }
        Multivector(out)
    }

    pub fn reverse(&self) -> Multivector {
        let mut out = self.0;
        for (c, &g) in out.iter_mut().zip(BLADE_GRADES.iter()) {
            *c *= reverse_sign(g);
        }
        Multivector(out)
    }

    /// Keeps only the blades of grade `k`.
    pub fn grade_project(&self, k: usize) -> Multivector {
        let mut out = [0.0; 8];
        for (i, &g) in BLADE_GRADES.iter().enumerate() {
            if g == k {
                out[i] = self.0[i];
            }
        }
        Multivector(out)
    }

    /// Invariant inner product; e3-carrying blades do not contribute.
    pub fn pga_inner(&self, other: &Multivector) -> f64 {
        INNER_PRODUCT_SLOTS
            .iter()
            .map(|&i| self.0[i] * other.0[i])
            .sum()
    }

    /// Squared norm of the even (grades 0, 2) and odd (grades 1, 3) parts.
    fn parity_norms(&self) -> (f64, f64) {
        let mut even = 0.0;
        let mut odd = 0.0;
        for (c, &g) in self.0.iter().zip(BLADE_GRADES.iter()) {
            if g % 2 == 0 {
                even += c * c;
            } else {
                odd += c * c;
            }
        }
        (even, odd)
    }

    /// Rotor `cos(θ/2) + sin(θ/2) e12`.
    pub fn rotor(theta: f64) -> Multivector {
        let mut m = Self::ZERO;
        m.0[SCALAR] = (theta / 2.0).cos();
        m.0[E12] = (theta / 2.0).sin();
        m
    }

    /// Translator moving points by `(tx, ty)`.
    pub fn translator(tx: f64, ty: f64) -> Multivector {
        let mut m = Self::ONE;
        m.0[E13] = -0.5 * tx;
        m.0[E23] = -0.5 * ty;
        m
    }

    /// Reflection in the line with unit normal `(nx, ny)` and offset `d`.
    pub fn reflection(nx: f64, ny: f64, d: f64) -> Multivector {
        let mut m = Self::ZERO;
        m.0[E1] = nx;
        m.0[E2] = ny;
        m.0[E3] = d;
        m
    }

    /// Finite point at `(x, y)`: `e12 + x e23 - y e13`.
    pub fn point(x: f64, y: f64) -> Multivector {
        let mut m = Self::ZERO;
        m.0[E12] = 1.0;
        m.0[E23] = x;
        m.0[E13] = -y;
        m
    }

    /// Euclidean coordinates of a finite point produced by [`Multivector::point`].
    pub fn point_coords(&self) -> (f64, f64) {
        let w = self.0[E12];
        (self.0[E23] / w, -self.0[E13] / w)
    }

    /// Action of the unit versor `g` on `self`.
    ///
    /// Computed as `rev(g) ⋆ x' ⋆ g`, where `x' = x` for even versors and the
    /// grade involution of `x` for odd ones. On vectors this coincides with
    /// the twisted adjoint `h* ⋆ x ⋆ h⁻¹` of `h = g⁻¹`; the involution makes
    /// the action an algebra automorphism for reflections as well. With this
    /// convention `rotor(θ)` turns `e1` towards `e2` by `+θ`.
    pub fn twisted_adjoint(&self, g: &Multivector) -> Result<Multivector> {
        let norm = g.pga_inner(g);
        if (norm.abs() - 1.0).abs() > 1e-9 {
            return Err(Error::NonUnitVersor { norm });
        }
        let (even, odd) = g.parity_norms();
        let odd_versor = if odd <= 1e-18 {
            false
        } else if even <= 1e-18 {
            true
        } else {
            return Err(Error::MixedParityVersor { even, odd });
        };
        let x = if odd_versor {
            self.grade_involution()
        } else {
            *self
        };
        Ok(g.reverse().geometric_product(&x).geometric_product(g))
    }

    pub fn max_abs_diff(&self, other: &Multivector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Multivector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (c, name) in self.0.iter().zip(BLADE_NAMES.iter()) {
            if *c == 0.0 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if *name == "1" {
                write!(f, "{c}")?;
            } else {
                write!(f, "{c}{name}")?;
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

impl Index<usize> for Multivector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Multivector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for Multivector {
    type Output = Multivector;
    fn add(mut self, rhs: Multivector) -> Multivector {
        self += rhs;
        self
    }
}

impl AddAssign for Multivector {
    fn add_assign(&mut self, rhs: Multivector) {
        for (a, b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a += b;
        }
    }
}

impl Sub for Multivector {
    type Output = Multivector;
    fn sub(mut self, rhs: Multivector) -> Multivector {
        for (a, b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a -= b;
        }
        self
    }
}

impl Neg for Multivector {
    type Output = Multivector;
    fn neg(mut self) -> Multivector {
        for a in self.0.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl Mul<f64> for Multivector {
    type Output = Multivector;
    fn mul(mut self, rhs: f64) -> Multivector {
        for a in self.0.iter_mut() {
            *a *= rhs;
        }
        self
    }
}

/// Geometric product.
impl Mul for Multivector {
    type Output = Multivector;
    fn mul(self, rhs: Multivector) -> Multivector {
        self.geometric_product(&rhs)
    }
}
