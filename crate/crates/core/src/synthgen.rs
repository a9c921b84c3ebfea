//! Synthetic labeled plot generator.
//!
//! Builds plots from a declarative [`SceneSpec`]: circular grass, bush and
//! tree-canopy footprints over a gently sloped ground plane.  Every point
//! gets a true class, and the plot-level occupancy ratios are computed
//! analytically from the footprint geometry — so the generator provides both
//! the weak labels used for training and the dense ground truth used only
//! for evaluation.
//!
//! Geometry is arranged so that, after elevation normalization with the
//! standard 0.5 m neighborhood, every non-trunk point's normalized elevation
//! falls strictly inside its class band (soil/lower below 0.5 m, medium
//! 0.5–1.5 m, higher above 1.5 m).  Trunk points deliberately violate the
//! band: they belong to the higher stratum but sit at 0.15–1.4 m, which is
//! exactly the ambiguity the elevation prior must tolerate.
//!
//! The ground is a jittered lattice dense enough that each point has a
//! ground-level neighbor within the normalization radius; a repair pass
//! inserts a ground return under any point that still lacks one (this can
//! happen for points pulled inward by the rim clamp).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plotio::{normalized_elevations, Plot, RawPoint};
use crate::rng::{derive_seed, rng_from_seed, STREAM_ORACLE, STREAM_SYNTH};

/// Margin kept free of points inside the plot radius, so the re-centering
/// applied by the plot parser can never push a point outside the plot.
const RIM_MARGIN: f64 = 0.05;
/// Ground lattice spacing in meters.
const LATTICE_SPACING: f64 = 0.3;
/// Lattice jitter half-range in meters.
const LATTICE_JITTER: f64 = 0.05;
/// Maximum terrain slope per axis (m per m).
const MAX_SLOPE: f64 = 0.015;
/// Normalized-elevation bands sampled per class, relative to local ground.
const GRASS_BAND: (f64, f64) = (0.08, 0.43);
const BUSH_BAND: (f64, f64) = (0.58, 1.43);
const CANOPY_BASE: f64 = 1.75;
const TRUNK_BAND: (f64, f64) = (0.15, 1.40);

/// A circular element footprint (grass patch, bush, or tree canopy).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Footprint {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Declarative description of one synthetic plot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub plot_radius: f64,
    pub grass: Vec<Footprint>,
    pub bushes: Vec<Footprint>,
    pub trees: Vec<Footprint>,
    /// Points per m² sampled inside each footprint type.
    pub grass_density: f64,
    pub bush_density: f64,
    pub canopy_density: f64,
    /// Trunk returns generated under each tree.
    pub trunk_points: usize,
    /// Half-range of the uniform ground elevation noise (meters), modeling
    /// surface roughness plus ranging error; after min-normalization the
    /// soil returns spread over roughly `[0, 2·noise_std]`.
    pub noise_std: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            plot_radius: crate::plotio::DEFAULT_PLOT_RADIUS,
            grass: Vec::new(),
            bushes: Vec::new(),
            trees: Vec::new(),
            grass_density: 12.0,
            bush_density: 14.0,
            canopy_density: 12.0,
            trunk_points: 30,
            noise_std: 0.12,
        }
    }
}

/// True class of a generated point, matching the network's class columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointClass {
    Soil = 0,
    Lower = 1,
    Medium = 2,
    Higher = 3,
}

impl PointClass {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<PointClass> {
        [PointClass::Soil, PointClass::Lower, PointClass::Medium, PointClass::Higher]
            .get(i)
            .copied()
    }
}

/// A generated plot with dense ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScene {
    /// The plot, labels already set to the true occupancy ratios.
    pub plot: Plot,
    /// True class per point.
    pub classes: Vec<PointClass>,
    /// Analytic occupancy ratios `[lower, medium, higher]`.
    pub occupancy: [f64; 3],
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("truth sidecar: {0}")]
    Sidecar(String),
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InvalidSpec(msg));
        if !(1.0..=100.0).contains(&self.plot_radius) {
            return fail(format!("plot radius {} outside [1, 100]", self.plot_radius));
        }
        for (kind, fps) in [("grass", &self.grass), ("bush", &self.bushes), ("tree", &self.trees)] {
            for fp in fps.iter() {
                if !(fp.radius > 0.0 && fp.radius <= 2.0 * self.plot_radius) {
                    return fail(format!("{kind} footprint radius {} out of range", fp.radius));
                }
                if fp.cx.hypot(fp.cy) > self.plot_radius {
                    return fail(format!("{kind} footprint center outside the plot"));
                }
            }
        }
        for (name, d) in [
            ("grass", self.grass_density),
            ("bush", self.bush_density),
            ("canopy", self.canopy_density),
        ] {
            if !(0.0..=100.0).contains(&d) {
                return fail(format!("{name} density {d} outside [0, 100]"));
            }
        }
        if self.trunk_points > 10_000 {
            return fail("trunk point count too large".into());
        }
        if !(0.0..=0.2).contains(&self.noise_std) {
            return fail(format!(
                "ground noise {} outside [0, 0.2]; larger noise breaks the class bands",
                self.noise_std
            ));
        }
        Ok(())
    }

    /// A randomized pasture-like scene: broad grass cover (occasionally
    /// sparse or absent), a few bushes, and a few trees, with element
    /// parameters drawn uniformly.  Deterministic in `seed`.
    pub fn random(seed: u64, plot_radius: f64) -> SceneSpec {
        use rand::Rng;
        let mut rng = rng_from_seed(derive_seed(seed, STREAM_SYNTH, 1));
        // Grass dominates most plots, mirroring the pastoral sites this
        // model targets, but bare and sparsely covered plots still occur so
        // the lower-stratum labels span the full range.
        let n_grass = [0, 1, 2, 2, 3, 3][rng.random_range(0..6)];
        let n_bush = rng.random_range(0..=4);
        let n_tree = rng.random_range(0..=3);
        let mut place = |radius_range: std::ops::Range<f64>, count: usize| -> Vec<Footprint> {
            (0..count)
                .map(|_| {
                    let dist = 0.9 * plot_radius * rng.random_range(0.0f64..1.0).sqrt();
                    let angle = rng.random_range(0.0..std::f64::consts::TAU);
                    Footprint {
                        cx: dist * angle.cos(),
                        cy: dist * angle.sin(),
                        radius: rng.random_range(radius_range.clone()),
                    }
                })
                .collect()
        };
        let grass_radius = 0.35 * plot_radius..0.85 * plot_radius;
        SceneSpec {
            seed,
            plot_radius,
            grass: place(grass_radius, n_grass),
            bushes: place(0.6..2.2, n_bush),
            trees: place(1.2..3.8, n_tree),
            ..SceneSpec::default()
        }
    }

    /// Bare-soil scene (no vegetation).
    pub fn bare(seed: u64, plot_radius: f64) -> SceneSpec {
        SceneSpec { seed, plot_radius, ..SceneSpec::default() }
    }

    /// One grass footprint covering the whole plot: lower occupancy is 1.
    pub fn full_grass(seed: u64, plot_radius: f64) -> SceneSpec {
        SceneSpec {
            seed,
            plot_radius,
            grass: vec![Footprint { cx: 0.0, cy: 0.0, radius: plot_radius }],
            ..SceneSpec::default()
        }
    }
}

/// Internal generation class, finer than [`PointClass`] because trunks need
/// different band handling than canopy.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Subclass {
    Soil,
    Grass,
    Bush,
    Canopy,
    Trunk,
}

impl Subclass {
    fn to_class(self) -> PointClass {
        match self {
            Subclass::Soil => PointClass::Soil,
            Subclass::Grass => PointClass::Lower,
            Subclass::Bush => PointClass::Medium,
            Subclass::Canopy | Subclass::Trunk => PointClass::Higher,
        }
    }

    /// Open interval the normalized elevation must fall in; `None` exempts
    /// the subclass (trunks violate the bands by design).  Soil's lower
    /// bound is below zero because any non-negative value under 0.5 is fine.
    fn z_norm_band(self) -> Option<(f64, f64)> {
        match self {
            Subclass::Soil => Some((-1.0, 0.5)),
            Subclass::Grass => Some((1e-9, 0.5)),
            Subclass::Bush => Some((0.5, 1.5)),
            Subclass::Canopy => Some((1.5, f64::INFINITY)),
            Subclass::Trunk => None,
        }
    }
}

/// Generates the labeled scene for a spec.  Bit-identical output for equal
/// specs.
pub fn generate_plot(spec: &SceneSpec) -> Result<LabeledScene, SynthError> {
    use rand::Rng;
    spec.validate()?;
    let mut rng = rng_from_seed(derive_seed(spec.seed, STREAM_SYNTH, 0));
    let r = spec.plot_radius;
    let r_eff = r - RIM_MARGIN;

    // Terrain: sloped plane plus bounded uniform noise.
    let base = 100.0 + rng.random_range(0.0..100.0);
    let slope_x = rng.random_range(-MAX_SLOPE..MAX_SLOPE);
    let slope_y = rng.random_range(-MAX_SLOPE..MAX_SLOPE);
    let ground = move |x: f64, y: f64| base + slope_x * x + slope_y * y;

    let mut points: Vec<RawPoint> = Vec::new();
    let mut subclasses: Vec<Subclass> = Vec::new();

    let under_canopy = |x: f64, y: f64, trees: &[Footprint]| trees.iter().any(|t| t.contains(x, y));

    let push = |rng: &mut rand_chacha::ChaCha8Rng,
                points: &mut Vec<RawPoint>,
                subclasses: &mut Vec<Subclass>,
                sub: Subclass,
                x: f64,
                y: f64,
                z: f64| {
        // Radiometry separates vegetation (high NIR) from soil and bark.
        let (red, green, blue, nir, intensity) = match sub {
            Subclass::Grass | Subclass::Bush | Subclass::Canopy => (
                rng.random_range(0.08..0.18),
                rng.random_range(0.30..0.50),
                rng.random_range(0.10..0.25),
                rng.random_range(0.70..0.90),
                rng.random_range(0.10..0.50),
            ),
            Subclass::Soil => (
                rng.random_range(0.30..0.50),
                rng.random_range(0.25..0.40),
                rng.random_range(0.20..0.35),
                rng.random_range(0.15..0.30),
                rng.random_range(0.30..0.60),
            ),
            Subclass::Trunk => (
                rng.random_range(0.25..0.40),
                rng.random_range(0.20..0.35),
                rng.random_range(0.15..0.30),
                rng.random_range(0.20..0.35),
                rng.random_range(0.20..0.50),
            ),
        };
        let return_number =
            if sub != Subclass::Canopy && under_canopy(x, y, &spec.trees) { 2 } else { 1 };
        points.push(RawPoint { x, y, z, red, green, blue, nir, intensity, return_number });
        subclasses.push(sub);
    };

    // Ground lattice: jittered grid over the plot, dense enough that any
    // location inside the plot has a soil return within the 0.5 m
    // normalization radius.
    let steps = (2.0 * r / LATTICE_SPACING).ceil() as i64;
    for gy in 0..=steps {
        for gx in 0..=steps {
            let x0 = -r
                + gx as f64 * LATTICE_SPACING
                + rng.random_range(-LATTICE_JITTER..LATTICE_JITTER);
            let y0 = -r
                + gy as f64 * LATTICE_SPACING
                + rng.random_range(-LATTICE_JITTER..LATTICE_JITTER);
            let z = ground(x0, y0) + rng.random_range(0.0..2.0 * spec.noise_std.max(1e-6));
            if x0.hypot(y0) <= r_eff {
                push(&mut rng, &mut points, &mut subclasses, Subclass::Soil, x0, y0, z);
            }
        }
    }

    // Vegetation: uniform samples inside each footprint, kept when they land
    // inside the plot, at a class-specific height band above local ground.
    let scatter = |rng: &mut rand_chacha::ChaCha8Rng,
                   points: &mut Vec<RawPoint>,
                   subclasses: &mut Vec<Subclass>,
                   fp: &Footprint,
                   density: f64,
                   sub: Subclass,
                   band: (f64, f64)| {
        let n = (density * std::f64::consts::PI * fp.radius * fp.radius).round() as usize;
        for _ in 0..n {
            let dist = fp.radius * rng.random_range(0.0f64..1.0).sqrt();
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let (x, y) = (fp.cx + dist * angle.cos(), fp.cy + dist * angle.sin());
            if x.hypot(y) <= r_eff {
                let z = ground(x, y) + rng.random_range(band.0..band.1);
                push(rng, points, subclasses, sub, x, y, z);
            }
        }
    };
    for fp in &spec.grass {
        scatter(
            &mut rng,
            &mut points,
            &mut subclasses,
            fp,
            spec.grass_density,
            Subclass::Grass,
            GRASS_BAND,
        );
    }
    for fp in &spec.bushes {
        scatter(
            &mut rng,
            &mut points,
            &mut subclasses,
            fp,
            spec.bush_density,
            Subclass::Bush,
            BUSH_BAND,
        );
    }
    for fp in &spec.trees {
        let top = rng.random_range(2.5..9.0);
        scatter(
            &mut rng,
            &mut points,
            &mut subclasses,
            fp,
            spec.canopy_density,
            Subclass::Canopy,
            (CANOPY_BASE, top),
        );
        for _ in 0..spec.trunk_points {
            let (x, y) =
                (fp.cx + rng.random_range(-0.15..0.15), fp.cy + rng.random_range(-0.15..0.15));
            if x.hypot(y) <= r_eff {
                let z = ground(x, y) + rng.random_range(TRUNK_BAND.0..TRUNK_BAND.1);
                push(&mut rng, &mut points, &mut subclasses, Subclass::Trunk, x, y, z);
            }
        }
    }

    // Center on the exact centroid, matching what the plot parser enforces.
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    for p in points.iter_mut() {
        p.x -= cx;
        p.y -= cy;
    }
    // Pull any point the shift pushed past the rim back inside.
    for p in points.iter_mut() {
        let d = p.x.hypot(p.y);
        if d > r_eff {
            let s = r_eff / d;
            p.x *= s;
            p.y *= s;
        }
    }

    // Repair pass: a clamped point may have lost its ground anchor, or local
    // soil noise may exceed a low vegetation sample; insert a noise-free
    // plane-level return at the offender's x/y until every band holds.  The
    // clean anchor makes progress deterministic: the offender's neighborhood
    // minimum drops to the terrain plane itself.
    for _ in 0..4 {
        let z_norm = normalized_elevations(&points, crate::plotio::DEFAULT_NEIGHBORHOOD_RADIUS);
        let mut offenders = Vec::new();
        for ((p, sub), &zn) in points.iter().zip(&subclasses).zip(&z_norm) {
            if let Some((lo, hi)) = sub.z_norm_band() {
                if !(zn > lo && zn < hi) {
                    offenders.push((p.x, p.y));
                }
            }
        }
        if offenders.is_empty() {
            break;
        }
        for (x, y) in offenders {
            let z = ground(x + cx, y + cy);
            push(&mut rng, &mut points, &mut subclasses, Subclass::Soil, x, y, z);
        }
    }

    // Analytic occupancy from the original footprint geometry.
    let occupancy = [
        occupancy_from_footprints(&spec.grass, r),
        occupancy_from_footprints(&spec.bushes, r),
        occupancy_from_footprints(&spec.trees, r),
    ];

    let classes = subclasses.iter().map(|s| s.to_class()).collect();
    let plot = Plot {
        plot_id: format!("synth-{:08x}", spec.seed),
        radius: r,
        points,
        z_norm: None,
        labels: Some(occupancy),
    };
    Ok(LabeledScene { plot, classes, occupancy })
}

/// Fraction of the plot disk covered by the union of the footprints,
/// computed by adaptive Simpson quadrature over the union chord length.
///
/// The domain is split at every footprint's x-extent so that narrow
/// footprints cannot hide between the initial quadrature nodes.
pub fn occupancy_from_footprints(footprints: &[Footprint], plot_radius: f64) -> f64 {
    if footprints.is_empty() {
        return 0.0;
    }
    let r = plot_radius;
    let mut cuts = vec![-r, r];
    for fp in footprints {
        for x in [fp.cx - fp.radius, fp.cx, fp.cx + fp.radius] {
            if x > -r && x < r {
                cuts.push(x);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let chord = |x: f64| union_chord(footprints, r, x);
    let mut area = 0.0;
    for w in cuts.windows(2) {
        if w[1] - w[0] > 1e-12 {
            let eps = 1e-8 * r * r * (w[1] - w[0]) / (2.0 * r);
            area += adaptive_simpson(&chord, w[0], w[1], eps, 40);
        }
    }
    (area / (std::f64::consts::PI * r * r)).clamp(0.0, 1.0)
}

/// Total length of `{y : (x, y) in disk ∩ union of footprints}`.
fn union_chord(footprints: &[Footprint], plot_radius: f64, x: f64) -> f64 {
    let w2 = plot_radius * plot_radius - x * x;
    if w2 <= 0.0 {
        return 0.0;
    }
    let w = w2.sqrt();
    let mut spans: Vec<(f64, f64)> = Vec::new();
    for fp in footprints {
        let dx = x - fp.cx;
        let h2 = fp.radius * fp.radius - dx * dx;
        if h2 <= 0.0 {
            continue;
        }
        let h = h2.sqrt();
        let (lo, hi) = ((fp.cy - h).max(-w), (fp.cy + h).min(w));
        if lo < hi {
            spans.push((lo, hi));
        }
    }
    spans.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (lo, hi) in spans {
        match cur {
            Some((clo, chi)) if lo <= chi => cur = Some((clo, chi.max(hi))),
            Some((clo, chi)) => {
                total += chi - clo;
                cur = Some((lo, hi));
            }
            None => cur = Some((lo, hi)),
        }
    }
    if let Some((clo, chi)) = cur {
        total += chi - clo;
    }
    total
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64, depth: usize) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, eps, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
        left + right + (left + right - whole) / 15.0
    } else {
        simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
            + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
    }
}

/// Monte-Carlo reference for the occupancy ratios: `samples` uniform draws
/// over the plot disk, counting membership per stratum's footprint union.
/// With 10⁶ samples the standard error stays below 0.001 per stratum.
pub fn oracle_occupancy(spec: &SceneSpec, samples: usize) -> [f64; 3] {
    use rand::Rng;
    let mut rng = rng_from_seed(derive_seed(spec.seed, STREAM_ORACLE, 0));
    let mut hits = [0usize; 3];
    for _ in 0..samples {
        let dist = spec.plot_radius * rng.random_range(0.0f64..1.0).sqrt();
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let (x, y) = (dist * angle.cos(), dist * angle.sin());
        for (s, fps) in [&spec.grass, &spec.bushes, &spec.trees].into_iter().enumerate() {
            if fps.iter().any(|fp| fp.contains(x, y)) {
                hits[s] += 1;
            }
        }
    }
    hits.map(|h| h as f64 / samples as f64)
}

/// Serializes the dense truth: occupancy header plus one class index per
/// point, aligned with the plot's point order.
pub fn write_truth_sidecar(scene: &LabeledScene) -> String {
    let mut out = format!(
        "{} {:.6} {:.6} {:.6}\n",
        scene.plot.plot_id, scene.occupancy[0], scene.occupancy[1], scene.occupancy[2]
    );
    for c in &scene.classes {
        out.push_str(&format!("{}\n", c.index()));
    }
    out
}

/// Parses a truth sidecar back into occupancy ratios and per-point classes.
pub fn parse_truth_sidecar(text: &str) -> Result<([f64; 3], Vec<PointClass>), SynthError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| SynthError::Sidecar("missing header".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 {
        return Err(SynthError::Sidecar(format!("header needs 4 fields, got {}", toks.len())));
    }
    let mut occ = [0.0; 3];
    for (o, tok) in occ.iter_mut().zip(&toks[1..]) {
        *o = tok.parse().map_err(|_| SynthError::Sidecar(format!("bad occupancy '{tok}'")))?;
    }
    let classes = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<usize>()
                .ok()
                .and_then(PointClass::from_index)
                .ok_or_else(|| SynthError::Sidecar(format!("bad class index '{l}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((occ, classes))
}
