use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat run-in before the first feature.
const LEAD_IN: f64 = 8.0;
/// Flat run-out kept free of features before the goal line.
const RUN_OUT: f64 = 4.0;
/// Extra flat ground beyond the goal so the sensors see a surface there.
const BEYOND_GOAL: f64 = 12.0;
/// Depth that gap walls reach (the sensors see them down to here).
pub const GAP_FLOOR: f64 = -10.0;
const MIN_BASE: f64 = -1.0;
const MAX_BASE: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Flat,
    Slope,
    Stair,
    Gap,
    Hurdle,
}

/// One segment of the corridor with its kind-specific parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Feature {
    Flat { x0: f64, x1: f64, height: f64 },
    Slope { x0: f64, x1: f64, grade: f64 },
    Stair { x0: f64, x1: f64, steps: usize, rise: f64, run: f64 },
    Gap { x0: f64, x1: f64 },
    Hurdle { x0: f64, x1: f64, height: f64 },
}

impl Feature {
    pub fn kind(&self) -> FeatureKind {
        match self {
            Feature::Flat { .. } => FeatureKind::Flat,
            Feature::Slope { .. } => FeatureKind::Slope,
            Feature::Stair { .. } => FeatureKind::Stair,
            Feature::Gap { .. } => FeatureKind::Gap,
            Feature::Hurdle { .. } => FeatureKind::Hurdle,
        }
    }

    pub fn span(&self) -> (f64, f64) {
        match *self {
            Feature::Flat { x0, x1, .. }
            | Feature::Slope { x0, x1, .. }
            | Feature::Stair { x0, x1, .. }
            | Feature::Gap { x0, x1 }
            | Feature::Hurdle { x0, x1, .. } => (x0, x1),
        }
    }
}

/// Solid block standing on the ground.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub x0: f64,
    pub x1: f64,
    pub bottom: f64,
    pub top: f64,
}

/// Corridor geometry: ground polylines broken by gaps, plus blocks.
///
/// Each ground piece is a polyline with non-decreasing x; equal consecutive
/// x values form vertical risers. Height queries at a riser return the
/// surface to its right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub seed: u64,
    pub difficulty: f64,
    pub x_goal: f64,
    pub length: f64,
    pub features: Vec<Feature>,
    pub ground: Vec<Vec<(f64, f64)>>,
    pub blocks: Vec<Block>,
}

/// Incrementally lays out a corridor from left to right.
#[derive(Debug)]
pub struct TerrainBuilder {
    x: f64,
    base: f64,
    features: Vec<Feature>,
    ground: Vec<Vec<(f64, f64)>>,
    blocks: Vec<Block>,
}

impl TerrainBuilder {
    pub fn new() -> Self {
        TerrainBuilder {
            x: 0.0,
            base: 0.0,
            features: Vec::new(),
            ground: vec![vec![(0.0, 0.0)]],
            blocks: Vec::new(),
        }
    }

    pub fn cursor(&self) -> f64 {
        self.x
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    fn piece(&mut self) -> &mut Vec<(f64, f64)> {
        self.ground.last_mut().expect("always one open piece")
    }

    pub fn flat(&mut self, len: f64) -> &mut Self {
        let (x0, y) = (self.x, self.base);
        self.x += len;
        let x = self.x;
        self.piece().push((x, y));
        self.features.push(Feature::Flat { x0, x1: x, height: y });
        self
    }

    pub fn slope(&mut self, len: f64, grade: f64) -> &mut Self {
        let x0 = self.x;
        self.x += len;
        self.base += grade * len;
        let (x, y) = (self.x, self.base);
        self.piece().push((x, y));
        self.features.push(Feature::Slope { x0, x1: x, grade });
        self
    }

    /// `rise` is signed: negative stairs go down.
    pub fn stair(&mut self, steps: usize, rise: f64, run: f64) -> &mut Self {
        let x0 = self.x;
        for _ in 0..steps {
            self.base += rise;
            let (x, y) = (self.x, self.base);
            self.piece().push((x, y));
            self.x += run;
            let x = self.x;
            self.piece().push((x, y));
        }
        let x1 = self.x;
        self.features.push(Feature::Stair { x0, x1, steps, rise, run });
        self
    }

    pub fn gap(&mut self, width: f64) -> &mut Self {
        let x0 = self.x;
        self.x += width;
        let (x, y) = (self.x, self.base);
        self.ground.push(vec![(x, y)]);
        self.features.push(Feature::Gap { x0, x1: x });
        self
    }

    pub fn hurdle(&mut self, width: f64, height: f64) -> &mut Self {
        let x0 = self.x;
        self.flat(width);
        self.features.pop();
        let x1 = self.x;
        self.blocks.push(Block {
            x0,
            x1,
            bottom: self.base,
            top: self.base + height,
        });
        self.features.push(Feature::Hurdle { x0, x1, height });
        self
    }

    pub fn build(self, seed: u64, difficulty: f64, x_goal: f64) -> Terrain {
        let length = self.x;
        Terrain {
            seed,
            difficulty,
            x_goal,
            length,
            features: self.features,
            ground: self.ground,
            blocks: self.blocks,
        }
    }
}

impl Default for TerrainBuilder {
    fn default() -> Self {
        Self::new()
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Procedural corridor. Feature kinds are drawn from a shuffled bag of the
/// four obstacle kinds, so any four consecutive features cover every kind.
/// Spacing shrinks and severity grows with `difficulty`; difficulty 0 is a
/// single flat segment.
pub fn generate_terrain(seed: u64, difficulty: f64, x_goal: f64) -> Result<Terrain> {
    if !(0.0..=1.0).contains(&difficulty) {
        return Err(Error::config(format!("difficulty {difficulty} outside [0, 1]")));
    }
    if !(x_goal > 1.0 && x_goal < 10_000.0) {
        return Err(Error::config(format!("x_goal {x_goal} outside (1, 10000)")));
    }
    let mut b = TerrainBuilder::new();
    if difficulty == 0.0 {
        b.flat(x_goal + BEYOND_GOAL);
        return Ok(b.build(seed, difficulty, x_goal));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = difficulty;
    let mut bag: Vec<FeatureKind> = Vec::new();
    b.flat(LEAD_IN);
    let limit = x_goal - RUN_OUT;
    loop {
        let spacer = lerp(14.0, 2.0, d) * rng.random_range(0.75..1.25);
        if bag.is_empty() {
            bag = vec![
                FeatureKind::Slope,
                FeatureKind::Stair,
                FeatureKind::Gap,
                FeatureKind::Hurdle,
            ];
            bag.shuffle(&mut rng);
        }
        let kind = *bag.last().expect("bag refilled");
        let u: f64 = rng.random();
        // sign of elevation changes, biased back toward the allowed band
        let up = if b.base() > MAX_BASE - 1.0 {
            false
        } else if b.base() < MIN_BASE + 1.0 {
            true
        } else {
            rng.random_bool(0.5)
        };
        let sign = if up { 1.0 } else { -1.0 };
        let (len, add): (f64, Box<dyn FnOnce(&mut TerrainBuilder)>) = match kind {
            FeatureKind::Slope => {
                let len = rng.random_range(3.0..6.0);
                let grade = sign * (0.05 + 0.25 * d * u);
                (len, Box::new(move |b| {
                    b.slope(len, grade);
                }))
            }
            FeatureKind::Stair => {
                let steps = rng.random_range(2..=4usize);
                let run = rng.random_range(0.8..1.5);
                let rise = sign * (0.08 + 0.32 * d * u);
                (steps as f64 * run, Box::new(move |b| {
                    b.stair(steps, rise, run);
                }))
            }
            FeatureKind::Gap => {
                let w = 0.4 + 1.6 * d * u;
                (w, Box::new(move |b| {
                    b.gap(w);
                }))
            }
            FeatureKind::Hurdle => {
                let w = rng.random_range(0.3..0.6);
                let h = 0.3 + 0.7 * d * u;
                (w, Box::new(move |b| {
                    b.hurdle(w, h);
                }))
            }
            FeatureKind::Flat => unreachable!("flat is never drawn"),
        };
        if b.cursor() + spacer + len > limit {
            break;
        }
        bag.pop();
        b.flat(spacer);
        add(&mut b);
    }
    let rest = x_goal + BEYOND_GOAL - b.cursor();
    b.flat(rest.max(BEYOND_GOAL));
    Ok(b.build(seed, difficulty, x_goal))
}

impl Terrain {
    /// Ground height at `x`, `None` over gaps and outside the corridor.
    pub fn ground_height(&self, x: f64) -> Option<f64> {
        for piece in &self.ground {
            let (first, last) = (piece[0].0, piece[piece.len() - 1].0);
            if x < first || x > last {
                continue;
            }
            // last vertex at or left of x, skipping risers
            let mut best = None;
            for w in piece.windows(2) {
                let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                if x1 > x0 && x >= x0 && x <= x1 {
                    let h = if x == x1 { y1 } else { y0 + (y1 - y0) * (x - x0) / (x1 - x0) };
                    best = Some(h);
                    if x < x1 {
                        break;
                    }
                }
            }
            if best.is_some() {
                return best;
            }
        }
        None
    }

    /// Highest standable surface at `x`: ground or the top of a block.
    pub fn surface(&self, x: f64) -> Option<f64> {
        let mut h = self.ground_height(x);
        for blk in &self.blocks {
            if x >= blk.x0 && x <= blk.x1 {
                h = Some(h.map_or(blk.top, |g| g.max(blk.top)));
            }
        }
        h
    }

    /// Highest surface over the closed interval between `a` and `b`.
    pub fn surface_max(&self, a: f64, b: f64) -> Option<f64> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut best: Option<f64> = None;
        let mut take = |v: f64| best = Some(best.map_or(v, |m: f64| m.max(v)));
        for x in [lo, hi] {
            if let Some(h) = self.surface(x) {
                take(h);
            }
        }
        for piece in &self.ground {
            for &(x, y) in piece {
                if x >= lo && x <= hi {
                    take(y);
                }
            }
        }
        for blk in &self.blocks {
            if blk.x1 >= lo && blk.x0 <= hi {
                take(blk.top);
            }
        }
        best
    }

    /// Line segments seen by the rangefinder: ground pieces, gap walls and
    /// block outlines.
    pub fn segments(&self) -> Vec<[(f64, f64); 2]> {
        let mut segs = Vec::new();
        let n = self.ground.len();
        for (k, piece) in self.ground.iter().enumerate() {
            for w in piece.windows(2) {
                if w[0] != w[1] {
                    segs.push([w[0], w[1]]);
                }
            }
            if k > 0 {
                let (x, y) = piece[0];
                segs.push([(x, GAP_FLOOR), (x, y)]);
            }
            if k + 1 < n {
                let (x, y) = piece[piece.len() - 1];
                segs.push([(x, y), (x, GAP_FLOOR)]);
            }
        }
        for blk in &self.blocks {
            segs.push([(blk.x0, blk.bottom), (blk.x0, blk.top)]);
            segs.push([(blk.x0, blk.top), (blk.x1, blk.top)]);
            segs.push([(blk.x1, blk.top), (blk.x1, blk.bottom)]);
        }
        segs
    }

    pub fn count(&self, kind: FeatureKind) -> usize {
        self.features.iter().filter(|f| f.kind() == kind).count()
    }
}
