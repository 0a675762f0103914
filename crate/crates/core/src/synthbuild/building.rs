use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::primitives::from_convex_polygons;
use crate::geometry::TriangleMesh;
use crate::{seeded_rng, Error, Point3, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Footprint {
    /// `width` along x, `depth` along y.
    Rect { width: f64, depth: f64 },
    /// A `width × depth` rectangle with a `notch_width × notch_depth` block
    /// removed from its `(+x, +y)` corner.
    LShape { width: f64, depth: f64, notch_width: f64, notch_depth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoofKind {
    Flat,
    Gabled,
    Hipped,
}

impl RoofKind {
    pub const ALL: [RoofKind; 3] = [RoofKind::Flat, RoofKind::Gabled, RoofKind::Hipped];
}

/// Parametric description of one procedural building.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingSpec {
    pub footprint: Footprint,
    /// Eave height.
    pub height: f64,
    pub roof: RoofKind,
    /// Roof slope in degrees; ignored for flat roofs.
    pub pitch_deg: f64,
    /// Seed for everything derived from this building downstream.
    pub seed: u64,
}

impl BuildingSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")))
            }
        };
        positive("height", self.height)?;
        match self.footprint {
            Footprint::Rect { width, depth } => {
                positive("width", width)?;
                positive("depth", depth)?;
            }
            Footprint::LShape { width, depth, notch_width, notch_depth } => {
                positive("width", width)?;
                positive("depth", depth)?;
                positive("notch_width", notch_width)?;
                positive("notch_depth", notch_depth)?;
                if notch_width >= width || notch_depth >= depth {
                    return bad("notch must be smaller than the footprint".into());
                }
                if self.roof != RoofKind::Flat {
                    return bad("pitched roofs require a rectangular footprint".into());
                }
            }
        }
        if self.roof != RoofKind::Flat && !(self.pitch_deg > 0.0 && self.pitch_deg < 90.0) {
            return bad(format!("roof pitch {} outside (0, 90) degrees", self.pitch_deg));
        }
        Ok(())
    }

    /// Ridge rise above the eaves.
    pub fn roof_rise(&self) -> f64 {
        let Footprint::Rect { width, depth } = self.footprint else { return 0.0 };
        let run = match self.roof {
            RoofKind::Flat => return 0.0,
            RoofKind::Gabled => width / 2.0,
            RoofKind::Hipped => width.min(depth) / 2.0,
        };
        run * self.pitch_deg.to_radians().tan()
    }
}

/// Builds the closed, outward-oriented mesh of a building in metric units with
/// the footprint corner at the origin and the ground at `z = 0`.
pub fn generate_building(spec: &BuildingSpec) -> Result<TriangleMesh> {
    spec.validate()?;
    let mesh = match spec.footprint {
        Footprint::Rect { width, depth } => match spec.roof {
            RoofKind::Flat => extrude(&[[0.0, 0.0], [width, 0.0], [width, depth], [0.0, depth]], &[[0, 1, 2], [0, 2, 3]], spec.height),
            RoofKind::Gabled => gabled(width, depth, spec.height, spec.roof_rise()),
            RoofKind::Hipped if width <= depth => hipped(width, depth, spec.height, spec.roof_rise()),
            RoofKind::Hipped => {
                // Generate with the ridge along y, then swap x/y; the mirror
                // flips handedness, so windings are reversed as well.
                let m = hipped(depth, width, spec.height, spec.roof_rise());
                let verts = m.vertices().iter().map(|p| Point3::new(p.y, p.x, p.z)).collect();
                TriangleMesh::new(verts, m.faces().to_vec())?.flipped()
            }
        },
        Footprint::LShape { width, depth, notch_width, notch_depth } => {
            let (w, d, nw, nd) = (width, depth, notch_width, notch_depth);
            let outline = [[0.0, 0.0], [w, 0.0], [w, d - nd], [w - nw, d - nd], [w - nw, d], [0.0, d]];
            // Fan from the reflex corner (index 3) covers the L exactly.
            extrude(&outline, &[[3, 4, 5], [3, 5, 0], [3, 0, 1], [3, 1, 2]], spec.height)
        }
    };
    debug_assert!(mesh.is_watertight());
    Ok(mesh)
}

/// Prism over a counter-clockwise outline with the given cap triangulation.
fn extrude(outline: &[[f64; 2]], cap: &[[u32; 3]], height: f64) -> TriangleMesh {
    let n = outline.len() as u32;
    let mut vertices: Vec<Point3> = outline.iter().map(|&[x, y]| Point3::new(x, y, 0.0)).collect();
    vertices.extend(outline.iter().map(|&[x, y]| Point3::new(x, y, height)));
    let mut faces = Vec::new();
    for &[a, b, c] in cap {
        faces.push([a, c, b]);
        faces.push([a + n, b + n, c + n]);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        faces.push([i, j, j + n]);
        faces.push([i, j + n, i + n]);
    }
    TriangleMesh::new(vertices, faces).expect("prism indices are in range")
}

fn box_corners(width: f64, depth: f64, height: f64) -> Vec<Point3> {
    vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(width, 0.0, 0.0),
        Point3::new(width, depth, 0.0),
        Point3::new(0.0, depth, 0.0),
        Point3::new(0.0, 0.0, height),
        Point3::new(width, 0.0, height),
        Point3::new(width, depth, height),
        Point3::new(0.0, depth, height),
    ]
}

/// Ridge along y at `x = width / 2`.
fn gabled(width: f64, depth: f64, height: f64, rise: f64) -> TriangleMesh {
    let mut v = box_corners(width, depth, height);
    v.push(Point3::new(width / 2.0, 0.0, height + rise));
    v.push(Point3::new(width / 2.0, depth, height + rise));
    let polys = [
        vec![0, 3, 2, 1],
        vec![0, 1, 5, 8, 4],
        vec![3, 7, 9, 6, 2],
        vec![0, 4, 7, 3],
        vec![1, 2, 6, 5],
        vec![4, 8, 9, 7],
        vec![5, 6, 9, 8],
    ];
    from_convex_polygons(v, &polys)
}

/// Equal-pitch hip roof; requires `width <= depth` (ridge along y).
fn hipped(width: f64, depth: f64, height: f64, rise: f64) -> TriangleMesh {
    let mut v = box_corners(width, depth, height);
    let walls = [vec![0, 3, 2, 1], vec![0, 1, 5, 4], vec![3, 7, 6, 2], vec![0, 4, 7, 3], vec![1, 2, 6, 5]];
    let half = width / 2.0;
    if depth - width <= 1e-12 * depth {
        v.push(Point3::new(half, depth / 2.0, height + rise));
        let mut polys = walls.to_vec();
        polys.extend([vec![4, 5, 8], vec![5, 6, 8], vec![6, 7, 8], vec![7, 4, 8]]);
        return from_convex_polygons(v, &polys);
    }
    v.push(Point3::new(half, half, height + rise));
    v.push(Point3::new(half, depth - half, height + rise));
    let mut polys = walls.to_vec();
    polys.extend([vec![4, 5, 8], vec![6, 7, 9], vec![4, 8, 9, 7], vec![5, 6, 9, 8]]);
    from_convex_polygons(v, &polys)
}

/// Distribution over procedural buildings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecDistribution {
    /// Relative weights of flat, gabled and hipped roofs.
    pub roof_mix: [f64; 3],
    /// Probability of an L-shaped footprint (flat roofs only).
    pub l_shape_prob: f64,
    pub side_range: (f64, f64),
    pub height_range: (f64, f64),
    pub pitch_range_deg: (f64, f64),
}

impl Default for SpecDistribution {
    fn default() -> Self {
        SpecDistribution {
            roof_mix: [1.0, 1.0, 1.0],
            l_shape_prob: 0.3,
            side_range: (8.0, 20.0),
            height_range: (3.0, 12.0),
            pitch_range_deg: (20.0, 45.0),
        }
    }
}

impl SpecDistribution {
    pub fn sample(&self, seed: u64) -> Result<BuildingSpec> {
        let total: f64 = self.roof_mix.iter().sum();
        if !(total > 0.0) || self.roof_mix.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidSpec(format!("roof mix {:?} has no positive weight", self.roof_mix)));
        }
        let mut rng = seeded_rng(seed);
        let mut pick: f64 = rng.random::<f64>() * total;
        let mut roof = RoofKind::Hipped;
        for (kind, w) in RoofKind::ALL.into_iter().zip(self.roof_mix) {
            if pick < w {
                roof = kind;
                break;
            }
            pick -= w;
        }
        let (lo, hi) = self.side_range;
        let width = rng.random_range(lo..=hi);
        let depth = rng.random_range(lo..=hi);
        let height = rng.random_range(self.height_range.0..=self.height_range.1);
        let pitch_deg = rng.random_range(self.pitch_range_deg.0..=self.pitch_range_deg.1);
        let want_l: bool = rng.random_bool(self.l_shape_prob.clamp(0.0, 1.0));
        let footprint = if roof == RoofKind::Flat && want_l {
            Footprint::LShape {
                width,
                depth,
                notch_width: width * rng.random_range(0.3..0.7),
                notch_depth: depth * rng.random_range(0.3..0.7),
            }
        } else {
            Footprint::Rect { width, depth }
        };
        let spec = BuildingSpec { footprint, height, roof, pitch_deg, seed };
        spec.validate()?;
        Ok(spec)
    }
}
