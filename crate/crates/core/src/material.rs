//! Periodic piecewise permittivity: a background medium with one disk
//! inclusion per cell, each region following its own frequency law.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::reduce_to_cell;

/// Frequency dependence of one material region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum FrequencyLaw {
    Constant {
        value: f64,
    },
    /// ε(ω) = a + b / (c - ω²)
    Rational {
        a: f64,
        b: f64,
        c: f64,
    },
}

impl FrequencyLaw {
    pub fn eval(&self, omega: f64) -> f64 {
        match *self {
            FrequencyLaw::Constant { value } => value,
            FrequencyLaw::Rational { a, b, c } => a + b / (c - omega * omega),
        }
    }

    /// Smallest |c - ω²| over `[lo, hi]`; infinite for constant laws.
    fn pole_distance(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            FrequencyLaw::Constant { .. } => f64::INFINITY,
            FrequencyLaw::Rational { c, .. } => {
                let (s0, s1) = square_range(lo, hi);
                if c < s0 {
                    s0 - c
                } else if c > s1 {
                    c - s1
                } else {
                    0.0
                }
            }
        }
    }

    /// Range of the law over `[lo, hi]`: a scan at 1e-3 resolution plus the
    /// endpoints and the stationary point ω = 0.
    pub fn bounds(&self, lo: f64, hi: f64) -> (f64, f64) {
        let steps = (((hi - lo) / 1e-3).ceil() as usize).max(1);
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut visit = |w: f64| {
            let v = self.eval(w);
            min = min.min(v);
            max = max.max(v);
        };
        for i in 0..=steps {
            visit(lo + (hi - lo) * i as f64 / steps as f64);
        }
        if lo < 0.0 && hi > 0.0 {
            visit(0.0);
        }
        (min, max)
    }
}

/// Range of ω² for ω in [lo, hi].
fn square_range(lo: f64, hi: f64) -> (f64, f64) {
    if lo <= 0.0 && hi >= 0.0 {
        (0.0, (lo * lo).max(hi * hi))
    } else {
        let (a, b) = (lo * lo, hi * hi);
        (a.min(b), a.max(b))
    }
}

impl fmt::Display for FrequencyLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrequencyLaw::Constant { value } => write!(f, "constant({value})"),
            FrequencyLaw::Rational { a, b, c } => write!(f, "{a} + {b}/({c} - w^2)"),
        }
    }
}

/// One violated model invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Where a triangle sits relative to the inclusion boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Background,
    Inclusion,
    Interface,
}

/// Permittivity ε(x, ω) of a square lattice of disks in a background medium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialModel {
    pub background: FrequencyLaw,
    pub inclusion: FrequencyLaw,
    pub inclusion_center: [f64; 2],
    pub inclusion_radius: f64,
    /// Frequencies [ω₀, ω₁] on which the laws are declared valid.
    pub valid_range: [f64; 2],
}

/// Poles closer than this (in ω²) count as inside the validity range.
const POLE_MARGIN: f64 = 1e-9;

impl MaterialModel {
    /// Relative cylinder diameter 0.75 of the lattice constant 2π.
    pub const PAPER_RADIUS: f64 = 0.75 * PI;

    /// Validate and return the model, or a configuration error listing every
    /// violation.
    pub fn checked(self) -> Result<Self> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(self)
        } else {
            let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
            Err(Error::Material(msg.join("; ")))
        }
    }

    /// Air (ε = 1) with ε = 8.9 cylinders, frequency independent.
    pub fn dobson() -> Self {
        Self {
            background: FrequencyLaw::Constant { value: 1.0 },
            inclusion: FrequencyLaw::Constant { value: 8.9 },
            inclusion_center: [0.0, 0.0],
            inclusion_radius: Self::PAPER_RADIUS,
            valid_range: [0.0, 0.7],
        }
    }

    /// Air with dispersive cylinders ε(ω) = 1 + 5.34 / (1 - ω²).
    pub fn rational_cylinders() -> Self {
        Self {
            inclusion: FrequencyLaw::Rational {
                a: 1.0,
                b: 5.34,
                c: 1.0,
            },
            ..Self::dobson()
        }
    }

    /// Constant permittivity everywhere.
    pub fn homogeneous(eps: f64) -> Self {
        Self {
            background: FrequencyLaw::Constant { value: eps },
            inclusion: FrequencyLaw::Constant { value: eps },
            ..Self::dobson()
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let [lo, hi] = self.valid_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            out.push(Violation {
                field: "valid_range",
                message: format!("[{lo}, {hi}] is not a finite interval"),
            });
            return out;
        }
        if !(self.inclusion_radius > 0.0 && self.inclusion_radius <= PI) {
            out.push(Violation {
                field: "inclusion_radius",
                message: format!(
                    "radius {} must lie in (0, π] so the disk fits in the cell",
                    self.inclusion_radius
                ),
            });
        }
        if !self.inclusion_center.iter().all(|c| c.is_finite()) {
            out.push(Violation {
                field: "inclusion_center",
                message: "center must be finite".into(),
            });
        }
        for (field, law) in [
            ("background", &self.background),
            ("inclusion", &self.inclusion),
        ] {
            if let FrequencyLaw::Rational { c, .. } = law {
                if law.pole_distance(lo, hi) <= POLE_MARGIN {
                    out.push(Violation {
                        field,
                        message: format!(
                            "pole at ω = {:.6} inside the validity range [{lo}, {hi}]",
                            c.max(0.0).sqrt()
                        ),
                    });
                    continue;
                }
            }
            let (min, max) = law.bounds(lo, hi);
            if !(min.is_finite() && max.is_finite()) {
                out.push(Violation {
                    field,
                    message: format!("{law} is not finite on [{lo}, {hi}]"),
                });
            } else if min <= 0.0 {
                out.push(Violation {
                    field,
                    message: format!("{law} is not positive on [{lo}, {hi}] (min {min})"),
                });
            }
        }
        out
    }

    /// Lower and upper permittivity bounds c₀, c₁ over the validity range.
    pub fn bounds(&self) -> (f64, f64) {
        let [lo, hi] = self.valid_range;
        let (a0, a1) = self.background.bounds(lo, hi);
        let (b0, b1) = self.inclusion.bounds(lo, hi);
        (a0.min(b0), a1.max(b1))
    }

    pub fn check_frequency(&self, omega: f64) -> Result<()> {
        let [lo, hi] = self.valid_range;
        if omega >= lo && omega <= hi {
            Ok(())
        } else {
            Err(Error::FrequencyOutOfRange { omega, lo, hi })
        }
    }

    /// Region permittivities (background, inclusion) at `omega`.
    pub fn region_values(&self, omega: f64) -> Result<(f64, f64)> {
        self.check_frequency(omega)?;
        Ok((self.background.eval(omega), self.inclusion.eval(omega)))
    }

    /// Whether `x` lies strictly inside a periodic copy of the disk.
    pub fn in_inclusion(&self, x: [f64; 2]) -> bool {
        let x = reduce_to_cell(x);
        let d = reduce_to_cell([
            x[0] - self.inclusion_center[0],
            x[1] - self.inclusion_center[1],
        ]);
        d[0].hypot(d[1]) < self.inclusion_radius
    }

    pub fn eval_permittivity(&self, x: [f64; 2], omega: f64) -> Result<f64> {
        let (bg, inc) = self.region_values(omega)?;
        Ok(if self.in_inclusion(x) { inc } else { bg })
    }

    /// Classify a straight-sided triangle against every periodic copy of the
    /// disk boundary.
    pub fn classify_triangle(&self, v: &[[f64; 2]; 3]) -> Region {
        let centroid = [
            (v[0][0] + v[1][0] + v[2][0]) / 3.0,
            (v[0][1] + v[1][1] + v[2][1]) / 3.0,
        ];
        let d = reduce_to_cell([
            centroid[0] - self.inclusion_center[0],
            centroid[1] - self.inclusion_center[1],
        ]);
        let nearest = [centroid[0] - d[0], centroid[1] - d[1]];
        let r = self.inclusion_radius;
        let mut region = Region::Background;
        for i in -1..=1 {
            for j in -1..=1 {
                let c = [
                    nearest[0] + 2.0 * PI * i as f64,
                    nearest[1] + 2.0 * PI * j as f64,
                ];
                let far = v
                    .iter()
                    .map(|p| (p[0] - c[0]).hypot(p[1] - c[1]))
                    .fold(0.0, f64::max);
                let near = point_triangle_distance(c, v);
                if far < r {
                    region = Region::Inclusion;
                } else if near < r {
                    return Region::Interface;
                }
            }
        }
        region
    }
}

fn point_triangle_distance(p: [f64; 2], v: &[[f64; 2]; 3]) -> f64 {
    let cross = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let s0 = cross(v[0], v[1], p);
    let s1 = cross(v[1], v[2], p);
    let s2 = cross(v[2], v[0], p);
    let inside = (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0);
    if inside {
        return 0.0;
    }
    (0..3)
        .map(|k| segment_distance(p, v[k], v[(k + 1) % 3]))
        .fold(f64::INFINITY, f64::min)
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (ap[0] - t * ab[0]).hypot(ap[1] - t * ab[1])
}
