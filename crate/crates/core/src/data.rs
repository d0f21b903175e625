//! Procedural sprite dataset with exhaustively enumerated ground-truth factors.
//!
//! Rasterization is a center-of-pixel inside test in the sprite's own frame.
//! Every geometric quantity (center, half-size, rotation cosines) is snapped
//! to a 2⁻¹² grid first, so the inside tests only see short dyadic rationals
//! and the images do not depend on how the platform rounds transcendentals.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is in the graph
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Upper bound on the number of enumerated images.
pub const MAX_IMAGES: usize = 1_000_000;

/// Sprite half-size at scale 1, as a fraction of the canvas side.
const BASE_HALF_SIZE: f64 = 3.0 / 16.0;

fn snap(v: f64) -> f64 {
    (v * 4096.0).round() / 4096.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpriteShape {
    Square,
    Ellipse,
    Heart,
}

impl SpriteShape {
    pub const ALL: [SpriteShape; 3] = [SpriteShape::Square, SpriteShape::Ellipse, SpriteShape::Heart];

    fn from_code(code: f64) -> Result<Self> {
        match code as i64 {
            0 => Ok(SpriteShape::Square),
            1 => Ok(SpriteShape::Ellipse),
            2 => Ok(SpriteShape::Heart),
            _ => Err(Error::data(format!("unknown shape code {code}"))),
        }
    }

    /// Inside test in the sprite frame; `h` is the half-size in pixels.
    fn contains(self, u: f64, v: f64, h: f64) -> bool {
        match self {
            SpriteShape::Square => -h <= u && u < h && -h <= v && v < h,
            SpriteShape::Ellipse => {
                let b = snap(0.6 * h);
                u * u * b * b + v * v * h * h < h * h * b * b
            }
            SpriteShape::Heart => {
                let k = snap(1.2 / h);
                let x = u * k;
                let y = -v * k + 0.125;
                let r = x * x + y * y - 1.0;
                r * r * r - x * x * y * y * y <= 0.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Shape,
    Orientation,
    Scale,
    PosX,
    PosY,
}

impl FactorKind {
    pub fn name(self) -> &'static str {
        match self {
            FactorKind::Shape => "shape",
            FactorKind::Orientation => "orientation",
            FactorKind::Scale => "scale",
            FactorKind::PosX => "posX",
            FactorKind::PosY => "posY",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "shape" => FactorKind::Shape,
            "orientation" => FactorKind::Orientation,
            "scale" => FactorKind::Scale,
            "posX" => FactorKind::PosX,
            "posY" => FactorKind::PosY,
            other => return Err(Error::config(format!("unknown factor `{other}`"))),
        })
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// One generative factor and its value grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSpec {
    pub kind: FactorKind,
    pub values: Vec<f64>,
}

impl FactorSpec {
    /// Default grid for a factor of the given cardinality.
    ///
    /// Shapes are codes `0..n`; orientations cover `[0, 2π)`; scales
    /// `[0.5, 1]`; positions `[0, 1]` (a single value sits at the center).
    pub fn with_cardinality(kind: FactorKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config(format!("factor {} needs cardinality ≥ 1", kind.name())));
        }
        let values = match kind {
            FactorKind::Shape => {
                if n > 3 {
                    return Err(Error::config("at most 3 shapes are available"));
                }
                (0..n).map(|i| i as f64).collect()
            }
            FactorKind::Orientation => (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect(),
            FactorKind::Scale => {
                if n == 1 {
                    vec![1.0]
                } else {
                    linspace(0.5, 1.0, n)
                }
            }
            FactorKind::PosX | FactorKind::PosY => linspace(0.0, 1.0, n),
        };
        Self::new(kind, values)
    }

    pub fn new(kind: FactorKind, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config(format!("factor {} has an empty grid", kind.name())));
        }
        if values.windows(2).any(|w| !(w[1] > w[0])) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config(format!("factor {} grid must be finite and strictly increasing", kind.name())));
        }
        Ok(FactorSpec { kind, values })
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    /// Parse `name:cardinality[,name:cardinality...]` into default grids.
    pub fn parse_list(s: &str) -> Result<Vec<FactorSpec>> {
        let mut out: Vec<FactorSpec> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, card) = part
                .split_once(':')
                .ok_or_else(|| Error::config(format!("factor `{part}` must be name:cardinality")))?;
            let kind = FactorKind::parse(name.trim())?;
            let n: usize = card.trim().parse().map_err(|_| Error::config(format!("bad cardinality in `{part}`")))?;
            if out.iter().any(|f| f.kind == kind) {
                return Err(Error::config(format!("factor {name} listed twice")));
            }
            out.push(FactorSpec::with_cardinality(kind, n)?);
        }
        if out.is_empty() {
            return Err(Error::config("no factors given"));
        }
        Ok(out)
    }

    /// `name:cardinality` form used by [`FactorSpec::parse_list`].
    pub fn short(&self) -> String {
        format!("{}:{}", self.name(), self.cardinality())
    }
}

/// Toy CI dataset: one square, 16×16 positions, 4 scales.
pub fn desk_specs() -> Vec<FactorSpec> {
    FactorSpec::parse_list("posX:16,posY:16,scale:4").expect("static spec")
}

/// dSprites-shaped spec: 3 shapes, 40 orientations, 6 scales, 32×32 positions.
pub fn dsprites_specs() -> Vec<FactorSpec> {
    FactorSpec::parse_list("shape:3,orientation:40,scale:6,posX:32,posY:32").expect("static spec")
}

/// The Cartesian product of factor grids, enumerated in row-major order
/// (first factor varies slowest).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSpace {
    specs: Vec<FactorSpec>,
    len: usize,
}

impl FactorSpace {
    pub fn new(specs: Vec<FactorSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::config("factor space needs at least one factor"));
        }
        let mut len: usize = 1;
        for s in &specs {
            len = len
                .checked_mul(s.cardinality())
                .filter(|&n| n <= MAX_IMAGES)
                .ok_or_else(|| Error::config(format!("factor product exceeds the {MAX_IMAGES}-image budget")))?;
        }
        Ok(FactorSpace { specs, len })
    }

    pub fn specs(&self) -> &[FactorSpec] {
        &self.specs
    }

    pub fn num_factors(&self) -> usize {
        self.specs.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.specs.iter().map(FactorSpec::cardinality).collect()
    }

    /// Number of factor tuples.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn labels_of(&self, mut index: usize) -> Vec<u32> {
        let mut labels = vec![0u32; self.specs.len()];
        for (slot, spec) in labels.iter_mut().zip(&self.specs).rev() {
            *slot = (index % spec.cardinality()) as u32;
            index /= spec.cardinality();
        }
        labels
    }

    pub fn index_of(&self, labels: &[u32]) -> Result<usize> {
        if labels.len() != self.specs.len() {
            return Err(Error::usage("label row length differs from factor count"));
        }
        let mut idx = 0usize;
        for (&l, spec) in labels.iter().zip(&self.specs) {
            if l as usize >= spec.cardinality() {
                return Err(Error::usage(format!("label {l} out of range for {}", spec.name())));
            }
            idx = idx * spec.cardinality() + l as usize;
        }
        Ok(idx)
    }

    /// Sprite parameters for a label row; factors not in the space take defaults.
    pub fn sprite_params(&self, labels: &[u32]) -> SpriteParams {
        let mut p = SpriteParams::default();
        for (spec, &l) in self.specs.iter().zip(labels) {
            let v = spec.values[l as usize];
            match spec.kind {
                FactorKind::Shape => p.shape = SpriteShape::from_code(v).unwrap_or(SpriteShape::Square),
                FactorKind::Orientation => p.orientation = v,
                FactorKind::Scale => p.scale = v,
                FactorKind::PosX => p.pos_x = v,
                FactorKind::PosY => p.pos_y = v,
            }
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpriteParams {
    pub shape: SpriteShape,
    pub scale: f64,
    pub orientation: f64,
    pub pos_x: f64,
    pub pos_y: f64,
}

impl Default for SpriteParams {
    fn default() -> Self {
        SpriteParams { shape: SpriteShape::Square, scale: 1.0, orientation: 0.0, pos_x: 0.5, pos_y: 0.5 }
    }
}

/// Binary rasterization, one byte (0 or 1) per pixel, row-major.
pub fn render_sprite(p: &SpriteParams, resolution: usize) -> Vec<u8> {
    let r = resolution as f64;
    let cx = snap(0.5 + p.pos_x * (r - 1.0));
    let cy = snap(0.5 + p.pos_y * (r - 1.0));
    let h = snap(p.scale * r * BASE_HALF_SIZE);
    let (c, s) = (snap(p.orientation.cos()), snap(p.orientation.sin()));
    let mut img = vec![0u8; resolution * resolution];
    for row in 0..resolution {
        let dy = row as f64 + 0.5 - cy;
        for col in 0..resolution {
            let dx = col as f64 + 0.5 - cx;
            let u = c * dx + s * dy;
            let v = -s * dx + c * dy;
            if p.shape.contains(u, v, h) {
                img[row * resolution + col] = 1;
            }
        }
    }
    img
}

/// Every factor tuple rendered once, with its label row.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorDataset {
    space: FactorSpace,
    resolution: usize,
    /// `N × resolution²` bytes in {0,1}.
    pixels: Vec<u8>,
    /// `N × F` label matrix.
    labels: Vec<u32>,
}

impl FactorDataset {
    /// Assemble a dataset from stored parts, checking sizes.
    pub fn from_parts(space: FactorSpace, resolution: usize, pixels: Vec<u8>, labels: Vec<u32>) -> Result<Self> {
        let n = space.len();
        if pixels.len() != n * resolution * resolution || labels.len() != n * space.num_factors() {
            return Err(Error::data("dataset parts do not match the factor space"));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(Error::data("binary dataset holds a pixel outside {0,1}"));
        }
        Ok(FactorDataset { space, resolution, pixels, labels })
    }

    pub fn space(&self) -> &FactorSpace {
        &self.space
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        1
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn all_labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let px = self.resolution * self.resolution;
        &self.pixels[i * px..(i + 1) * px]
    }

    pub fn labels(&self, i: usize) -> &[u32] {
        let f = self.space.num_factors();
        &self.labels[i * f..(i + 1) * f]
    }

    /// Images at `rows` as a `[B×1×R×R]` tensor of 0.0/1.0.
    pub fn batch(&self, rows: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * self.resolution * self.resolution);
        for &r in rows {
            data.extend(self.image(r).iter().map(|&p| f64::from(p)));
        }
        Tensor::new(vec![rows.len(), 1, self.resolution, self.resolution], data).expect("sizes agree")
    }

    /// Re-render image `i` from its labels.
    pub fn rerender(&self, i: usize) -> Vec<u8> {
        render_sprite(&self.space.sprite_params(self.labels(i)), self.resolution)
    }
}

/// Render the full Cartesian product of `specs`.
///
/// The enumeration is exhaustive and deterministic; `seed` only travels with
/// the dataset as metadata.
pub fn generate_dataset(specs: &[FactorSpec], resolution: usize, _seed: u64) -> Result<FactorDataset> {
    if resolution < 4 {
        return Err(Error::config("resolution must be at least 4"));
    }
    let space = FactorSpace::new(specs.to_vec())?;
    let n = space.len();
    let px = resolution * resolution;
    let mut pixels = Vec::with_capacity(n * px);
    let mut labels = Vec::with_capacity(n * space.num_factors());
    for i in 0..n {
        let l = space.labels_of(i);
        let img = render_sprite(&space.sprite_params(&l), resolution);
        if !img.contains(&1) {
            let desc: Vec<String> =
                space.specs().iter().zip(&l).map(|(s, v)| format!("{}={}", s.name(), s.values[*v as usize])).collect();
            return Err(Error::data(format!("sprite {} lies entirely off the canvas", desc.join(" "))));
        }
        pixels.extend_from_slice(&img);
        labels.extend_from_slice(&l);
    }
    Ok(FactorDataset { space, resolution, pixels, labels })
}

/// `L` row indices whose labels agree on factor `k` (one random value); all
/// other factors are drawn uniformly.
pub fn sample_fixed_factor_batch<R: Rng + ?Sized>(
    space: &FactorSpace,
    k: usize,
    l: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k >= space.num_factors() {
        return Err(Error::usage(format!("factor index {k} out of range")));
    }
    if l < 2 {
        return Err(Error::usage("a fixed-factor batch needs at least two samples"));
    }
    let cards = space.cardinalities();
    if cards[k] < 2 {
        return Err(Error::data(format!("factor {} is constant", space.specs()[k].name())));
    }
    let fixed = rng.random_range(0..cards[k]) as u32;
    let mut rows = Vec::with_capacity(l);
    let mut labels = vec![0u32; cards.len()];
    for _ in 0..l {
        for (j, slot) in labels.iter_mut().enumerate() {
            *slot = if j == k { fixed } else { rng.random_range(0..cards[j]) as u32 };
        }
        rows.push(space.index_of(&labels)?);
    }
    Ok(rows)
}

impl core::fmt::Display for FactorSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.short())
    }
}

/// Comma-joined short form of a spec list.
pub fn specs_to_string(specs: &[FactorSpec]) -> String {
    specs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_sizes() {
        assert_eq!(FactorSpace::new(desk_specs()).unwrap().len(), 1024);
        assert_eq!(FactorSpace::new(dsprites_specs()).unwrap().len(), 737_280);
        let one = FactorSpec::parse_list("scale:1").unwrap();
        assert_eq!(generate_dataset(&one, 16, 0).unwrap().len(), 1);
        // 11 factors' worth of product blows the guard.
        let big = FactorSpec::parse_list("orientation:200,scale:100,posX:100").unwrap();
        assert!(matches!(FactorSpace::new(big), Err(Error::Config(_))));
    }

    #[test]
    fn square_pixel_count_is_exact() {
        // At resolution 16 the half-size is 3·scale, so scale k/6 covers k×k pixels.
        for k in 1..=6u32 {
            let p = SpriteParams { scale: f64::from(k) / 6.0, ..SpriteParams::default() };
            let img = render_sprite(&p, 16);
            assert_eq!(img.iter().filter(|&&v| v == 1).count(), (k * k) as usize, "k={k}");
        }
    }

    #[test]
    fn orientation_full_turn_is_identity() {
        let a = SpriteParams { orientation: 0.0, ..SpriteParams::default() };
        let b = SpriteParams { orientation: 2.0 * PI, ..SpriteParams::default() };
        assert_eq!(render_sprite(&a, 32), render_sprite(&b, 32));
    }

    #[test]
    fn rendering_is_deterministic() {
        for shape in SpriteShape::ALL {
            let p = SpriteParams { shape, scale: 0.8, orientation: 1.1, pos_x: 0.3, pos_y: 0.6 };
            let a = render_sprite(&p, 32);
            assert_eq!(a, render_sprite(&p, 32));
            assert!(a.contains(&1));
        }
    }

    #[test]
    fn labels_round_trip_and_rerender() {
        let ds = generate_dataset(&desk_specs(), 16, 1).unwrap();
        for i in [0, 17, 513, 1023] {
            assert_eq!(ds.space().index_of(ds.labels(i)).unwrap(), i);
            assert_eq!(ds.rerender(i).as_slice(), ds.image(i));
        }
        assert!((0..ds.len()).all(|i| ds.image(i).contains(&1)));
    }

    #[test]
    fn fixed_factor_batches() {
        use crate::rng::RngStreams;
        let space = FactorSpace::new(desk_specs()).unwrap();
        let mut rng = RngStreams::new(3).stream("test", 0);
        let rows = sample_fixed_factor_batch(&space, 2, 50, &mut rng).unwrap();
        let first = space.labels_of(rows[0])[2];
        assert!(rows.iter().all(|&r| space.labels_of(r)[2] == first));

        let constant = FactorSpace::new(FactorSpec::parse_list("posX:4,scale:1").unwrap()).unwrap();
        assert!(sample_fixed_factor_batch(&constant, 1, 10, &mut rng).is_err());
        assert!(sample_fixed_factor_batch(&space, 0, 1, &mut rng).is_err());
    }

    #[test]
    fn parse_rejects_bad_specs() {
        assert!(FactorSpec::parse_list("posX").is_err());
        assert!(FactorSpec::parse_list("colour:3").is_err());
        assert!(FactorSpec::parse_list("posX:3,posX:4").is_err());
        assert!(FactorSpec::parse_list("shape:4").is_err());
        assert!(FactorSpec::new(FactorKind::Scale, vec![1.0, 0.5]).is_err());
    }
}
