//! Random-object generation: rooted clusters by exact lazy thinned
//! exploration, branching-envelope trees, boxed full graphs and two-rooted
//! connection trials.
//!
//! The exploration works generation by generation over a FIFO frontier.
//! Candidate children of the vertex being processed are drawn at full
//! Poisson intensity (mark-marginal rejection, then a displacement with
//! density `phi / D`), and a candidate survives with probability
//! `prod (1 - phi(z, y))` over the already *processed* vertices other than
//! its parent. Conditioned on the exploration history the unexplored
//! configuration is a Poisson process thinned by exactly that product, so
//! the surviving candidates reproduce the cluster law of the model; the
//! mean first-generation size in particular stays `lambda * int D(a, .)`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{norm2, Mark, Model};
use crate::rng::task_rng;

const MAX_SIM_DIM: usize = 16;

/// Termination caps for one exploration. Cap-terminated runs are valid
/// samples; the hit cap is recorded on the sample.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExplorationConfig {
    pub size_cap: u64,
    pub generation_cap: u32,
    pub radius_cap: Option<f64>,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig { size_cap: 100_000, generation_cap: u32::MAX, radius_cap: None }
    }
}

impl ExplorationConfig {
    pub fn with_size_cap(size_cap: u64) -> Self {
        ExplorationConfig { size_cap, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.size_cap < 1 {
            return Err(Error::InvalidArgument("size_cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which cap, if any, terminated the exploration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapKind {
    None,
    SizeCap,
    GenerationCap,
    RadiusCap,
}

impl fmt::Display for CapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CapKind::None => "none",
            CapKind::SizeCap => "size_cap",
            CapKind::GenerationCap => "generation_cap",
            CapKind::RadiusCap => "radius_cap",
        };
        f.write_str(s)
    }
}

/// Outcome of one rooted cluster exploration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClusterSample {
    /// Vertex count including the root.
    pub size: u64,
    pub capped: CapKind,
    /// Deepest generation reached (the root is generation 0).
    pub generations: u32,
    /// Largest Euclidean distance of a cluster vertex from the root.
    pub max_radius: f64,
}

impl ClusterSample {
    pub fn is_capped(&self) -> bool {
        self.capped != CapKind::None
    }
}

/// Thinned exploration samples the model's cluster law; branching skips the
/// thinning and realizes the dominating spatial branching envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreMode {
    Thinned,
    Branching,
}

/// Uniform spatial hash over vertex positions with cell size equal to the
/// model's interaction range, so a retention product only ever has to look
/// at the 3^d surrounding cells.
struct HashGrid {
    cell: f64,
    d: usize,
    buckets: HashMap<u64, Vec<u32>>,
}

impl HashGrid {
    fn new(cell: f64, d: usize) -> Self {
        HashGrid { cell: if cell > 0.0 { cell } else { 1.0 }, d, buckets: HashMap::new() }
    }

    fn key(coords: &[i64]) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for &c in coords {
            let mut z = (c as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            h = (h.rotate_left(23) ^ z).wrapping_mul(0x1000_0000_01b3);
        }
        h
    }

    fn cell_coords(&self, pos: &[f64], out: &mut [i64]) {
        for (o, &x) in out.iter_mut().zip(pos) {
            *o = (x / self.cell).floor() as i64;
        }
    }

    fn insert(&mut self, idx: u32, pos: &[f64]) {
        let mut coords = [0i64; MAX_SIM_DIM];
        self.cell_coords(pos, &mut coords[..self.d]);
        self.buckets.entry(Self::key(&coords[..self.d])).or_default().push(idx);
    }

    /// Calls `f` for every stored index in the 3^d cells around `pos`.
    /// Visited bucket keys are deduplicated, so an index is reported at
    /// most once even if distinct cells collide to one key.
    fn for_each_near<F: FnMut(u32)>(&self, pos: &[f64], mut f: F) {
        let mut center = [0i64; MAX_SIM_DIM];
        self.cell_coords(pos, &mut center[..self.d]);
        let mut seen_stack = [0u64; 128];
        let mut seen_heap: Vec<u64> = Vec::new();
        let mut seen_len = 0usize;
        let mut offset = [-1i64; MAX_SIM_DIM];
        loop {
            let mut coords = [0i64; MAX_SIM_DIM];
            for i in 0..self.d {
                coords[i] = center[i] + offset[i];
            }
            let key = Self::key(&coords[..self.d]);
            let dup = seen_stack[..seen_len.min(128)].contains(&key)
                || (seen_len > 128 && seen_heap.contains(&key));
            if !dup {
                if seen_len < 128 {
                    seen_stack[seen_len] = key;
                } else {
                    seen_heap.push(key);
                }
                seen_len += 1;
                if let Some(bucket) = self.buckets.get(&key) {
                    for &idx in bucket {
                        f(idx);
                    }
                }
            }
            // odometer over {-1, 0, 1}^d
            let mut i = 0;
            loop {
                if i == self.d {
                    return;
                }
                offset[i] += 1;
                if offset[i] <= 1 {
                    break;
                }
                offset[i] = -1;
                i += 1;
            }
        }
    }
}

/// The discovered vertices of one exploration.
struct Cloud {
    d: usize,
    positions: Vec<f64>,
    marks: Vec<Mark>,
    gens: Vec<u32>,
    grid: HashGrid,
}

impl Cloud {
    fn new(model: &Model) -> Result<Self> {
        let d = model.dim();
        if d > MAX_SIM_DIM {
            return Err(Error::InvalidArgument(format!(
                "simulation supports dimension <= {MAX_SIM_DIM}, got {d}"
            )));
        }
        Ok(Cloud {
            d,
            positions: Vec::new(),
            marks: Vec::new(),
            gens: Vec::new(),
            grid: HashGrid::new(model.interaction_range(), d),
        })
    }

    fn len(&self) -> u32 {
        self.marks.len() as u32
    }

    fn push(&mut self, pos: &[f64], mark: Mark, gen: u32) -> u32 {
        let idx = self.len();
        self.positions.extend_from_slice(pos);
        self.marks.push(mark);
        self.gens.push(gen);
        self.grid.insert(idx, pos);
        idx
    }

    fn pos(&self, idx: u32) -> &[f64] {
        let i = idx as usize * self.d;
        &self.positions[i..i + self.d]
    }
}

fn displacement(dst: &mut [f64], to: &[f64], from: &[f64]) {
    for i in 0..dst.len() {
        dst[i] = to[i] - from[i];
    }
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let p = Poisson::new(mean).expect("positive finite mean");
    let x: f64 = p.sample(rng);
    x as u64
}

/// A completed exploration with its full vertex cloud retained, so callers
/// can compute survival probabilities against augmented points.
pub struct Exploration {
    pub sample: ClusterSample,
    cloud: Cloud,
}

impl Exploration {
    /// Probability that an augmented vertex at `pos` with mark `mark`
    /// would attach to this cluster: `1 - prod_v (1 - phi(v, y))`.
    pub fn connect_prob(&self, model: &Model, pos: &[f64], mark: &Mark) -> f64 {
        let mut miss = 1.0;
        let mut dx = [0.0f64; MAX_SIM_DIM];
        let d = self.cloud.d;
        self.cloud.grid.for_each_near(pos, |idx| {
            if miss == 0.0 {
                return;
            }
            displacement(&mut dx[..d], pos, self.cloud.pos(idx));
            miss *= 1.0 - model.phi(&dx[..d], &self.cloud.marks[idx as usize], mark);
        });
        1.0 - miss
    }

    pub fn size(&self) -> u64 {
        self.sample.size
    }
}

/// Explores the cluster of a root with mark `root_mark` planted at the
/// origin, returning the full vertex cloud.
pub fn explore_full<R: Rng + ?Sized>(
    model: &Model,
    lambda: f64,
    root_mark: Mark,
    cfg: &ExplorationConfig,
    mode: ExploreMode,
    rng: &mut R,
) -> Result<Exploration> {
    cfg.validate()?;
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    model.check_mark(&root_mark)?;
    let d = model.dim();
    let mut cloud = Cloud::new(model)?;
    let origin = vec![0.0; d];
    cloud.push(&origin, root_mark, 0);

    let mut cursor: u32 = 0;
    let mut capped = CapKind::None;
    let mut gen_skipped = false;
    let mut radius_skipped = false;
    let mut max_radius = 0.0f64;
    let mut deepest: u32 = 0;
    let mut child_pos = [0.0f64; MAX_SIM_DIM];
    let mut dx = [0.0f64; MAX_SIM_DIM];

    'outer: while cursor < cloud.len() {
        let gen = cloud.gens[cursor as usize];
        if gen >= cfg.generation_cap {
            gen_skipped = true;
            cursor += 1;
            continue;
        }
        if let Some(rc) = cfg.radius_cap {
            if norm2(cloud.pos(cursor)) > rc * rc {
                radius_skipped = true;
                cursor += 1;
                continue;
            }
        }
        let parent_mark = cloud.marks[cursor as usize];
        let bound = model.degree_row_bound(&parent_mark);
        let n_candidates = poisson_count(lambda * bound, rng);
        for _ in 0..n_candidates {
            let child_mark = model.sample_mark(rng);
            let keep_mark: f64 = rng.random();
            if keep_mark * bound >= model.degree(&parent_mark, &child_mark) {
                continue;
            }
            model.sample_displacement(&parent_mark, &child_mark, rng, &mut dx[..d])?;
            {
                let ppos = cloud.pos(cursor);
                for i in 0..d {
                    child_pos[i] = ppos[i] + dx[i];
                }
            }
            if mode == ExploreMode::Thinned {
                let mut survive = 1.0f64;
                cloud.grid.for_each_near(&child_pos[..d], |idx| {
                    if survive == 0.0 || idx >= cursor {
                        return;
                    }
                    displacement(&mut dx[..d], &child_pos[..d], cloud.pos(idx));
                    survive *= 1.0 - model.phi(&dx[..d], &cloud.marks[idx as usize], &child_mark);
                });
                if survive < 1.0 {
                    let u: f64 = rng.random();
                    if u >= survive {
                        continue;
                    }
                }
            }
            if u64::from(cloud.len()) >= cfg.size_cap {
                capped = CapKind::SizeCap;
                break 'outer;
            }
            let child_gen = gen + 1;
            cloud.push(&child_pos[..d], child_mark, child_gen);
            deepest = deepest.max(child_gen);
            max_radius = max_radius.max(norm2(&child_pos[..d]).sqrt());
        }
        cursor += 1;
    }

    if capped == CapKind::None && gen_skipped {
        capped = CapKind::GenerationCap;
    } else if capped == CapKind::None && radius_skipped {
        capped = CapKind::RadiusCap;
    }
    let sample = ClusterSample {
        size: u64::from(cloud.len()),
        capped,
        generations: deepest,
        max_radius,
    };
    Ok(Exploration { sample, cloud })
}

/// Exact thinned exploration of the rooted cluster.
pub fn explore_cluster<R: Rng + ?Sized>(
    model: &Model,
    lambda: f64,
    root_mark: Mark,
    cfg: &ExplorationConfig,
    rng: &mut R,
) -> Result<ClusterSample> {
    explore_full(model, lambda, root_mark, cfg, ExploreMode::Thinned, rng).map(|e| e.sample)
}

/// Un-thinned branching envelope rooted at the same point.
pub fn explore_branching<R: Rng + ?Sized>(
    model: &Model,
    lambda: f64,
    root_mark: Mark,
    cfg: &ExplorationConfig,
    rng: &mut R,
) -> Result<ClusterSample> {
    explore_full(model, lambda, root_mark, cfg, ExploreMode::Branching, rng).map(|e| e.sample)
}

/// One branching exploration with the thinned cluster embedded in it: each
/// branching vertex additionally carries a survival flag, and the flagged
/// subtree follows the thinned cluster law while being pointwise contained
/// in the branching tree.
pub fn explore_coupled<R: Rng + ?Sized>(
    model: &Model,
    lambda: f64,
    root_mark: Mark,
    cfg: &ExplorationConfig,
    rng: &mut R,
) -> Result<(ClusterSample, ClusterSample)> {
    cfg.validate()?;
    model.check_mark(&root_mark)?;
    let d = model.dim();
    let mut cloud = Cloud::new(model)?;
    let origin = vec![0.0; d];
    cloud.push(&origin, root_mark, 0);
    let mut alive = vec![true];

    let mut cursor: u32 = 0;
    let mut capped = CapKind::None;
    let mut deepest: u32 = 0;
    let mut alive_deepest: u32 = 0;
    let mut max_radius = 0.0f64;
    let mut alive_radius = 0.0f64;
    let mut alive_count: u64 = 1;
    let mut gen_skipped = false;
    let mut child_pos = [0.0f64; MAX_SIM_DIM];
    let mut dx = [0.0f64; MAX_SIM_DIM];

    'outer: while cursor < cloud.len() {
        let gen = cloud.gens[cursor as usize];
        if gen >= cfg.generation_cap {
            gen_skipped = true;
            cursor += 1;
            continue;
        }
        let parent_mark = cloud.marks[cursor as usize];
        let parent_alive = alive[cursor as usize];
        let bound = model.degree_row_bound(&parent_mark);
        let n_candidates = poisson_count(lambda * bound, rng);
        for _ in 0..n_candidates {
            let child_mark = model.sample_mark(rng);
            let keep_mark: f64 = rng.random();
            if keep_mark * bound >= model.degree(&parent_mark, &child_mark) {
                continue;
            }
            model.sample_displacement(&parent_mark, &child_mark, rng, &mut dx[..d])?;
            {
                let ppos = cloud.pos(cursor);
                for i in 0..d {
                    child_pos[i] = ppos[i] + dx[i];
                }
            }
            let mut child_alive = parent_alive;
            if parent_alive {
                let mut survive = 1.0f64;
                cloud.grid.for_each_near(&child_pos[..d], |idx| {
                    if survive == 0.0 || idx >= cursor || !alive[idx as usize] {
                        return;
                    }
                    displacement(&mut dx[..d], &child_pos[..d], cloud.pos(idx));
                    survive *= 1.0 - model.phi(&dx[..d], &cloud.marks[idx as usize], &child_mark);
                });
                if survive < 1.0 {
                    let u: f64 = rng.random();
                    child_alive = u < survive;
                }
            }
            if u64::from(cloud.len()) >= cfg.size_cap {
                capped = CapKind::SizeCap;
                break 'outer;
            }
            let child_gen = gen + 1;
            cloud.push(&child_pos[..d], child_mark, child_gen);
            alive.push(child_alive);
            deepest = deepest.max(child_gen);
            let r = norm2(&child_pos[..d]).sqrt();
            max_radius = max_radius.max(r);
            if child_alive {
                alive_count += 1;
                alive_deepest = alive_deepest.max(child_gen);
                alive_radius = alive_radius.max(r);
            }
        }
        cursor += 1;
    }
    if capped == CapKind::None && gen_skipped {
        capped = CapKind::GenerationCap;
    }

    let branching = ClusterSample {
        size: u64::from(cloud.len()),
        capped,
        generations: deepest,
        max_radius,
    };
    let thinned = ClusterSample {
        size: alive_count,
        capped,
        generations: alive_deepest,
        max_radius: alive_radius,
    };
    Ok((thinned, branching))
}

/// Outcome of a two-rooted connection trial.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TwoRootOutcome {
    pub connected: bool,
    /// A cap terminated the joint exploration before the components met;
    /// the success frequency is then biased downward.
    pub cap_hit: bool,
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind { parent: Vec::new() }
    }

    fn add(&mut self) -> u32 {
        let i = self.parent.len() as u32;
        self.parent.push(i);
        i
    }

    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[rb as usize] = ra;
        }
    }
}

/// Joint lazy exploration rooted at `(0, a)` and `(y, b)` simultaneously,
/// with both roots pre-inserted and mutually thinning. Returns whether the
/// two roots land in one component before a cap fires.
///
/// Adjacency between discovered vertices is revealed exactly once per pair:
/// the candidate retention draw settles edges towards processed vertices
/// (a surviving candidate is a point known to be non-adjacent to all of
/// them), and a freshly accepted vertex draws one coin against every
/// discovered but still unprocessed vertex in range. Connectivity is
/// tracked by a union-find over the revealed edges.
pub fn two_root_connect<R: Rng + ?Sized>(
    model: &Model,
    lambda: f64,
    separation: &[f64],
    marks: (Mark, Mark),
    cfg: &ExplorationConfig,
    rng: &mut R,
) -> Result<TwoRootOutcome> {
    cfg.validate()?;
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    if separation.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: separation.len() });
    }
    model.check_mark(&marks.0)?;
    model.check_mark(&marks.1)?;

    let d = model.dim();
    let mut cloud = Cloud::new(model)?;
    let mut uf = UnionFind::new();
    let origin = vec![0.0; d];
    cloud.push(&origin, marks.0, 0);
    uf.add();
    cloud.push(separation, marks.1, 0);
    uf.add();

    // direct edge between the two roots
    let u: f64 = rng.random();
    if u < model.phi(separation, &marks.0, &marks.1) {
        return Ok(TwoRootOutcome { connected: true, cap_hit: false });
    }

    let mut cursor: u32 = 0;
    let mut capped = false;
    let mut child_pos = [0.0f64; MAX_SIM_DIM];
    let mut dx = [0.0f64; MAX_SIM_DIM];
    let mut unrevealed: Vec<u32> = Vec::new();

    'outer: while cursor < cloud.len() {
        let gen = cloud.gens[cursor as usize];
        if gen >= cfg.generation_cap {
            capped = true;
            cursor += 1;
            continue;
        }
        if let Some(rc) = cfg.radius_cap {
            if norm2(cloud.pos(cursor)) > rc * rc {
                capped = true;
                cursor += 1;
                continue;
            }
        }
        let parent_mark = cloud.marks[cursor as usize];
        let bound = model.degree_row_bound(&parent_mark);
        let n_candidates = poisson_count(lambda * bound, rng);
        for _ in 0..n_candidates {
            let child_mark = model.sample_mark(rng);
            let keep_mark: f64 = rng.random();
            if keep_mark * bound >= model.degree(&parent_mark, &child_mark) {
                continue;
            }
            model.sample_displacement(&parent_mark, &child_mark, rng, &mut dx[..d])?;
            {
                let ppos = cloud.pos(cursor);
                for i in 0..d {
                    child_pos[i] = ppos[i] + dx[i];
                }
            }
            // retention against processed vertices (sampling only; a
            // rejected candidate corresponds to no new point)
            let mut survive = 1.0f64;
            unrevealed.clear();
            cloud.grid.for_each_near(&child_pos[..d], |idx| {
                if idx < cursor {
                    if survive > 0.0 {
                        displacement(&mut dx[..d], &child_pos[..d], cloud.pos(idx));
                        survive *=
                            1.0 - model.phi(&dx[..d], &cloud.marks[idx as usize], &child_mark);
                    }
                } else if idx > cursor {
                    unrevealed.push(idx);
                }
            });
            if survive < 1.0 {
                let u: f64 = rng.random();
                if u >= survive {
                    continue;
                }
            }
            if u64::from(cloud.len()) >= cfg.size_cap {
                capped = true;
                break 'outer;
            }
            let new_idx = cloud.push(&child_pos[..d], child_mark, gen + 1);
            uf.add();
            uf.union(new_idx, cursor);
            unrevealed.sort_unstable();
            for &w in &unrevealed {
                displacement(&mut dx[..d], &child_pos[..d], cloud.pos(w));
                let p = model.phi(&dx[..d], &cloud.marks[w as usize], &child_mark);
                if p > 0.0 {
                    let u: f64 = rng.random();
                    if u < p {
                        uf.union(new_idx, w);
                    }
                }
            }
            if uf.find(0) == uf.find(1) {
                return Ok(TwoRootOutcome { connected: true, cap_hit: false });
            }
        }
        cursor += 1;
    }

    let connected = uf.find(0) == uf.find(1);
    Ok(TwoRootOutcome { connected, cap_hit: capped && !connected })
}

/// A full realization of the model restricted to the box `[-l, l]^d`.
#[derive(Debug, Clone)]
pub struct BoxGraph {
    pub half_width: f64,
    pub d: usize,
    pub positions: Vec<f64>,
    pub marks: Vec<Mark>,
    pub edges: Vec<Vec<u32>>,
}

impl BoxGraph {
    pub fn vertex_count(&self) -> usize {
        self.marks.len()
    }

    fn pos(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }
}

/// Samples the boxed graph: a Poisson number of vertices with i.i.d.
/// positions and marks, each unordered pair an independent edge with
/// probability `phi`. Refuses when the expected vertex count exceeds
/// `safety_limit`.
pub fn sample_box_graph<R: Rng + ?Sized>(
    model: &Model,
    lambda: f64,
    half_width: f64,
    safety_limit: f64,
    rng: &mut R,
) -> Result<BoxGraph> {
    if half_width <= 0.0 {
        return Err(Error::InvalidArgument("box half-width must be positive".into()));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    let d = model.dim();
    if d > MAX_SIM_DIM {
        return Err(Error::InvalidArgument(format!(
            "simulation supports dimension <= {MAX_SIM_DIM}, got {d}"
        )));
    }
    let mean = lambda * (2.0 * half_width).powi(d as i32);
    if mean > safety_limit {
        return Err(Error::ResourceRefusal(format!(
            "expected vertex count {mean:.1} exceeds the safety limit {safety_limit}"
        )));
    }
    let n = poisson_count(mean, rng) as usize;
    let mut positions = Vec::with_capacity(n * d);
    let mut marks = Vec::with_capacity(n);
    let mut grid = HashGrid::new(model.interaction_range(), d);
    for i in 0..n {
        for _ in 0..d {
            let u: f64 = rng.random();
            positions.push(half_width * (2.0 * u - 1.0));
        }
        marks.push(model.sample_mark(rng));
        grid.insert(i as u32, &positions[i * d..(i + 1) * d]);
    }
    let mut edges: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut dx = vec![0.0f64; d];
    let mut near: Vec<u32> = Vec::new();
    for i in 0..n {
        near.clear();
        grid.for_each_near(&positions[i * d..(i + 1) * d], |j| {
            if (j as usize) > i {
                near.push(j);
            }
        });
        near.sort_unstable();
        for &j in &near {
            let j = j as usize;
            for k in 0..d {
                dx[k] = positions[i * d + k] - positions[j * d + k];
            }
            let p = model.phi(&dx, &marks[i], &marks[j]);
            if p > 0.0 {
                let u: f64 = rng.random();
                if u < p {
                    edges[i].push(j as u32);
                    edges[j].push(i as u32);
                }
            }
        }
    }
    Ok(BoxGraph { half_width, d, positions, marks, edges })
}

/// Plants a root at the origin of a boxed graph (augmenting it with edges
/// drawn by `phi`) and returns the size of the root's component, counting
/// the root itself.
pub fn box_root_cluster_size<R: Rng + ?Sized>(
    model: &Model,
    graph: &BoxGraph,
    root_mark: Mark,
    rng: &mut R,
) -> u64 {
    let n = graph.vertex_count();
    let d = graph.d;
    let mut dx = vec![0.0f64; d];
    let mut seen = vec![false; n];
    let mut queue: Vec<u32> = Vec::new();
    for i in 0..n {
        dx.copy_from_slice(graph.pos(i));
        let p = model.phi(&dx, &root_mark, &graph.marks[i]);
        if p > 0.0 {
            let u: f64 = rng.random();
            if u < p && !seen[i] {
                seen[i] = true;
                queue.push(i as u32);
            }
        }
    }
    let mut head = 0;
    while head < queue.len() {
        let v = queue[head] as usize;
        head += 1;
        for &w in &graph.edges[v] {
            if !seen[w as usize] {
                seen[w as usize] = true;
                queue.push(w);
            }
        }
    }
    1 + queue.len() as u64
}

/// Runs `n` independent explorations in parallel with per-run substreams;
/// results are ordered by run index, so the output is identical for any
/// worker count.
pub fn explore_batch(
    model: &Model,
    lambda: f64,
    root_mark: Mark,
    cfg: &ExplorationConfig,
    mode: ExploreMode,
    master_seed: u64,
    stream_offset: u64,
    n: u64,
) -> Result<Vec<ClusterSample>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(master_seed, stream_offset + i);
            explore_full(model, lambda, root_mark, cfg, mode, &mut rng).map(|e| e.sample)
        })
        .collect()
}
