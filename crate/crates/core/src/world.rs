//! Procedural grid worlds, paths, the instruction grammar and datasets.
//!
//! A world is a `width x height` grid. Every cell is a node; walls remove
//! edges between 4-neighbours. Each node has four subviews (N, E, S, W), each
//! showing one of eight landmarks. A subview embeds as an 11-vector:
//! one-hot landmark (0..8), `(cos, sin)` of its heading (8..10) and a
//! navigability bit (10).

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, purpose};

pub type NodeId = usize;
pub type Token = usize;

pub const NUM_LANDMARKS: usize = 8;
pub const FEATURE_DIM: usize = 11;
pub const NAV_DIM: usize = 10;
pub const MAX_INSTRUCTION_LEN: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    N = 0,
    E = 1,
    S = 2,
    W = 3,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Dir {
        Dir::ALL[i % 4]
    }

    /// `(cos, sin)` of the heading angle; east is 0 degrees, north 90.
    pub fn unit(self) -> (f64, f64) {
        match self {
            Dir::E => (1.0, 0.0),
            Dir::N => (0.0, 1.0),
            Dir::W => (-1.0, 0.0),
            Dir::S => (0.0, -1.0),
        }
    }

    pub fn right(self) -> Dir {
        Dir::from_index(self.index() + 1)
    }

    pub fn left(self) -> Dir {
        Dir::from_index(self.index() + 3)
    }

    pub fn letter(self) -> &'static str {
        ["N", "E", "S", "W"][self.index()]
    }

    pub fn word(self) -> Token {
        match self {
            Dir::N => vocab::NORTH,
            Dir::S => vocab::SOUTH,
            Dir::E => vocab::EAST,
            Dir::W => vocab::WEST,
        }
    }

    fn offset(self) -> (i64, i64) {
        match self {
            Dir::N => (0, -1),
            Dir::E => (1, 0),
            Dir::S => (0, 1),
            Dir::W => (-1, 0),
        }
    }
}

/// The fixed 20-token instruction vocabulary.
pub mod vocab {
    use super::Token;

    pub const WORDS: [&str; 20] = [
        "BOS", "EOS", "walk", "north", "south", "east", "west", "to", "the", "then", "stop", "at",
        "door", "table", "plant", "lamp", "sofa", "shelf", "stairs", "sink",
    ];
    pub const SIZE: usize = WORDS.len();
    pub const BOS: Token = 0;
    pub const EOS: Token = 1;
    pub const WALK: Token = 2;
    pub const NORTH: Token = 3;
    pub const SOUTH: Token = 4;
    pub const EAST: Token = 5;
    pub const WEST: Token = 6;
    pub const TO: Token = 7;
    pub const THE: Token = 8;
    pub const THEN: Token = 9;
    pub const STOP: Token = 10;
    pub const AT: Token = 11;
    pub const FIRST_LANDMARK: Token = 12;

    pub fn landmark(id: usize) -> Token {
        FIRST_LANDMARK + id
    }

    pub fn lookup(word: &str) -> Option<Token> {
        WORDS.iter().position(|w| *w == word)
    }

    pub fn render(tokens: &[Token]) -> String {
        tokens
            .iter()
            .map(|&t| WORDS.get(t).copied().unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Subview embeddings of one node, in N, E, S, W order. STOP embeds as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub subviews: [Vec<f64>; 4],
    pub stop: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub id: usize,
    width: usize,
    height: usize,
    open: Vec<[bool; 4]>,
    landmarks: Vec<[u8; 4]>,
    dist: Vec<u32>,
}

impl World {
    /// Builds a world from explicit edge and landmark tables. Edges must be
    /// symmetric and stay inside the grid; the graph must be connected.
    pub fn from_parts(
        id: usize,
        width: usize,
        height: usize,
        open: Vec<[bool; 4]>,
        landmarks: Vec<[u8; 4]>,
    ) -> Result<World> {
        let n = width * height;
        if width == 0 || height == 0 || open.len() != n || landmarks.len() != n {
            return Err(Error::WorldGeneration("table sizes do not match grid".into()));
        }
        if landmarks.iter().flatten().any(|&l| l as usize >= NUM_LANDMARKS) {
            return Err(Error::WorldGeneration("landmark id out of range".into()));
        }
        let mut w = World {
            id,
            width,
            height,
            open,
            landmarks,
            dist: Vec::new(),
        };
        for v in 0..n {
            for d in Dir::ALL {
                if w.open[v][d.index()] {
                    match w.step_raw(v, d) {
                        Some(u) if w.open[u][(d.index() + 2) % 4] => {}
                        _ => {
                            return Err(Error::WorldGeneration(format!(
                                "edge {v}->{} is not symmetric or leaves the grid",
                                d.letter()
                            )))
                        }
                    }
                }
            }
        }
        if !w.is_connected() {
            return Err(Error::WorldGeneration("graph is not connected".into()));
        }
        w.dist = (0..n).flat_map(|s| w.bfs(s)).collect();
        Ok(w)
    }

    /// Seeded world; walls drop each interior edge with probability
    /// `wall_density`, retrying up to 100 times for a connected layout.
    pub fn generate(seed: u64, width: usize, height: usize, wall_density: f64) -> Result<World> {
        if width < 2 || height < 2 {
            return Err(Error::WorldGeneration(format!(
                "grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if !(0.0..=0.4).contains(&wall_density) {
            return Err(Error::WorldGeneration(format!(
                "wall density {wall_density} outside [0, 0.4]"
            )));
        }
        let n = width * height;
        for attempt in 0..100u64 {
            let mut rng = rng::rng_from(
                seed,
                &[purpose::WORLD, width as u64, height as u64, attempt],
            );
            let mut open = vec![[false; 4]; n];
            for y in 0..height {
                for x in 0..width {
                    let v = y * width + x;
                    if x + 1 < width && rng.gen::<f64>() >= wall_density {
                        open[v][Dir::E.index()] = true;
                        open[v + 1][Dir::W.index()] = true;
                    }
                    if y + 1 < height && rng.gen::<f64>() >= wall_density {
                        open[v][Dir::S.index()] = true;
                        open[v + width][Dir::N.index()] = true;
                    }
                }
            }
            let landmarks = (0..n)
                .map(|_| {
                    let mut l = [0u8; 4];
                    for slot in &mut l {
                        *slot = rng.gen_range(0..NUM_LANDMARKS as u8);
                    }
                    l
                })
                .collect();
            match World::from_parts(0, width, height, open, landmarks) {
                Ok(w) => return Ok(w),
                Err(Error::WorldGeneration(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::WorldGeneration(format!(
            "no connected {width}x{height} world at wall density {wall_density} after 100 attempts"
        )))
    }

    pub fn with_id(mut self, id: usize) -> World {
        self.id = id;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_nodes(&self) -> usize {
        self.width * self.height
    }

    pub fn coords(&self, v: NodeId) -> (usize, usize) {
        (v % self.width, v / self.width)
    }

    pub fn num_edges(&self) -> usize {
        self.open.iter().flatten().filter(|&&b| b).count() / 2
    }

    pub fn check_node(&self, v: NodeId) -> Result<()> {
        if v >= self.num_nodes() {
            return Err(Error::UnknownNode(v));
        }
        Ok(())
    }

    fn step_raw(&self, v: NodeId, d: Dir) -> Option<NodeId> {
        let (x, y) = self.coords(v);
        let (dx, dy) = d.offset();
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            return None;
        }
        Some(ny as usize * self.width + nx as usize)
    }

    pub fn is_open(&self, v: NodeId, d: Dir) -> bool {
        self.open[v][d.index()]
    }

    /// The neighbour reached by moving `d`, if that edge exists.
    pub fn step(&self, v: NodeId, d: Dir) -> Option<NodeId> {
        if self.is_open(v, d) {
            self.step_raw(v, d)
        } else {
            None
        }
    }

    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = (Dir, NodeId)> + '_ {
        Dir::ALL
            .into_iter()
            .filter_map(move |d| self.step(v, d).map(|u| (d, u)))
    }

    pub fn direction_between(&self, a: NodeId, b: NodeId) -> Option<Dir> {
        self.neighbors(a).find(|&(_, u)| u == b).map(|(d, _)| d)
    }

    pub fn landmark(&self, v: NodeId, d: Dir) -> usize {
        self.landmarks[v][d.index()] as usize
    }

    pub fn subview_features(&self, v: NodeId, d: Dir) -> Vec<f64> {
        let mut f = vec![0.0; FEATURE_DIM];
        f[self.landmark(v, d)] = 1.0;
        let (c, s) = d.unit();
        f[8] = c;
        f[9] = s;
        f[NAV_DIM] = if self.is_open(v, d) { 1.0 } else { 0.0 };
        f
    }

    pub fn observe_panoramic(&self, v: NodeId) -> Result<Scene> {
        self.check_node(v)?;
        Ok(Scene {
            subviews: Dir::ALL.map(|d| self.subview_features(v, d)),
            stop: vec![0.0; FEATURE_DIM],
        })
    }

    pub fn observe_front(&self, v: NodeId, heading: Dir) -> Result<Vec<f64>> {
        self.check_node(v)?;
        Ok(self.subview_features(v, heading))
    }

    fn bfs(&self, s: NodeId) -> Vec<u32> {
        let mut d = vec![u32::MAX; self.num_nodes()];
        d[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for (_, u) in self.neighbors(v) {
                if d[u] == u32::MAX {
                    d[u] = d[v] + 1;
                    q.push_back(u);
                }
            }
        }
        d
    }

    fn is_connected(&self) -> bool {
        self.bfs(0).iter().all(|&d| d != u32::MAX)
    }

    /// Shortest-path distance in edges.
    pub fn geodesic(&self, a: NodeId, b: NodeId) -> Result<usize> {
        self.check_node(a)?;
        self.check_node(b)?;
        let d = self.dist[a * self.num_nodes() + b];
        if d == u32::MAX {
            return Err(Error::InvalidPath(format!("nodes {a} and {b} are disconnected")));
        }
        Ok(d as usize)
    }

    pub(crate) fn dist_unchecked(&self, a: NodeId, b: NodeId) -> usize {
        self.dist[a * self.num_nodes() + b] as usize
    }

    /// Seeded shortest path between two seeded-uniform nodes whose distance
    /// lies in `[min_len, max_len]`.
    pub fn sample_path(&self, seed: u64, min_len: usize, max_len: usize) -> Result<Path> {
        if min_len < 1 || min_len > max_len || max_len > 10 {
            return Err(Error::InvalidPath(format!(
                "length range [{min_len}, {max_len}] outside 1 <= min <= max <= 10"
            )));
        }
        let n = self.num_nodes();
        let mut rng = rng::rng_from(seed, &[purpose::PATH, self.id as u64]);
        for _ in 0..1000 {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            let d = self.dist_unchecked(a, b);
            if d < min_len || d > max_len {
                continue;
            }
            let mut nodes = vec![a];
            let mut cur = a;
            while cur != b {
                let next: Vec<NodeId> = self
                    .neighbors(cur)
                    .map(|(_, u)| u)
                    .filter(|&u| self.dist_unchecked(u, b) + 1 == self.dist_unchecked(cur, b))
                    .collect();
                cur = next[rng.gen_range(0..next.len())];
                nodes.push(cur);
            }
            return Path::from_nodes(self, nodes);
        }
        Err(Error::InvalidPath(format!(
            "no node pair at distance [{min_len}, {max_len}] after 1000 attempts"
        )))
    }

    /// Ground-truth instruction for a path. Each maximal straight segment
    /// becomes "walk <dir> to the <landmark>", where the landmark is the one
    /// the segment's end node shows in the travel direction; clauses join
    /// with "then" and a closing "then stop at the <landmark>".
    pub fn oracle_instruction(&self, path: &Path) -> Result<Vec<Token>> {
        if path.moves.is_empty() {
            return Err(Error::InvalidPath("instruction needs at least one move".into()));
        }
        let mut tokens = vec![vocab::BOS];
        let mut last_lm = 0;
        let mut i = 0;
        while i < path.moves.len() {
            let d = path.moves[i];
            let mut j = i;
            while j + 1 < path.moves.len() && path.moves[j + 1] == d {
                j += 1;
            }
            let end = path.nodes[j + 1];
            last_lm = vocab::landmark(self.landmark(end, d));
            if i > 0 {
                tokens.push(vocab::THEN);
            }
            tokens.extend([vocab::WALK, d.word(), vocab::TO, vocab::THE, last_lm]);
            i = j + 1;
        }
        tokens.extend([vocab::THEN, vocab::STOP, vocab::AT, vocab::THE, last_lm, vocab::EOS]);
        if tokens.len() > MAX_INSTRUCTION_LEN {
            return Err(Error::InvalidInstruction(format!(
                "{} tokens exceeds the {MAX_INSTRUCTION_LEN}-token limit",
                tokens.len()
            )));
        }
        Ok(tokens)
    }
}

/// A node path `n_0 .. n_T` and its moves; the action sequence is the moves
/// followed by STOP.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub moves: Vec<Dir>,
}

impl Path {
    pub fn from_nodes(world: &World, nodes: Vec<NodeId>) -> Result<Path> {
        let Some(&first) = nodes.first() else {
            return Err(Error::InvalidPath("empty node list".into()));
        };
        world.check_node(first)?;
        let mut moves = Vec::with_capacity(nodes.len() - 1);
        for w in nodes.windows(2) {
            world.check_node(w[1])?;
            let d = world.direction_between(w[0], w[1]).ok_or_else(|| {
                Error::InvalidPath(format!("nodes {} and {} are not adjacent", w[0], w[1]))
            })?;
            moves.push(d);
        }
        Ok(Path { nodes, moves })
    }

    pub fn from_moves(world: &World, start: NodeId, moves: &[Dir]) -> Result<Path> {
        world.check_node(start)?;
        let mut nodes = vec![start];
        let mut cur = start;
        for &d in moves {
            cur = world
                .step(cur, d)
                .ok_or_else(|| Error::InvalidPath(format!("no edge {} from node {cur}", d.letter())))?;
            nodes.push(cur);
        }
        Ok(Path {
            nodes,
            moves: moves.to_vec(),
        })
    }

    pub fn start(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn goal(&self) -> NodeId {
        *self.nodes.last().expect("non-empty path")
    }

    /// Number of actions including the final STOP.
    pub fn num_actions(&self) -> usize {
        self.moves.len() + 1
    }

    pub fn len_edges(&self) -> usize {
        self.moves.len()
    }
}

/// Fraction of paths whose oracle instruction no other path in the list
/// with the same start node (and a different node sequence) shares.
pub fn instruction_uniqueness(world: &World, paths: &[Path]) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::Empty("paths"));
    }
    let instr: Vec<Vec<Token>> = paths
        .iter()
        .map(|p| world.oracle_instruction(p))
        .collect::<Result<_>>()?;
    let unique = (0..paths.len())
        .filter(|&i| {
            !(0..paths.len()).any(|j| {
                j != i
                    && paths[j].start() == paths[i].start()
                    && paths[j].nodes != paths[i].nodes
                    && instr[j] == instr[i]
            })
        })
        .count();
    Ok(unique as f64 / paths.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub world_id: usize,
    pub path: Path,
    pub instruction: Option<Vec<Token>>,
}

impl Episode {
    pub fn is_labeled(&self) -> bool {
        self.instruction.is_some()
    }
}

/// How worlds and paths are divided among splits.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_worlds: Vec<usize>,
    pub unseen_worlds: Vec<usize>,
    pub n_val_seen: usize,
    pub n_val_unseen: usize,
    pub min_len: usize,
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    pub labeled: Vec<Episode>,
    pub unlabeled: Vec<Episode>,
    pub val_seen: Vec<Episode>,
    pub val_unseen: Vec<Episode>,
}

impl Datasets {
    pub fn split(&self, name: &str) -> Option<&[Episode]> {
        match name {
            "train" => Some(&self.labeled),
            "unlabeled" => Some(&self.unlabeled),
            "val_seen" => Some(&self.val_seen),
            "val_unseen" => Some(&self.val_unseen),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldSet {
    worlds: Vec<World>,
}

impl WorldSet {
    /// Worlds are re-numbered so that `id == index`.
    pub fn new(worlds: Vec<World>) -> Self {
        let worlds = worlds
            .into_iter()
            .enumerate()
            .map(|(i, w)| w.with_id(i))
            .collect();
        WorldSet { worlds }
    }

    /// `count` worlds with sizes cycling through `sizes`.
    pub fn generate(seed: u64, count: usize, sizes: &[(usize, usize)], wall_density: f64) -> Result<Self> {
        let worlds = (0..count)
            .map(|i| {
                let (w, h) = sizes[i % sizes.len()];
                World::generate(rng::derive_seed(seed, &[i as u64]), w, h, wall_density)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(worlds))
    }

    pub fn get(&self, id: usize) -> Result<&World> {
        self.worlds
            .get(id)
            .ok_or_else(|| Error::Dataset(format!("unknown world id {id}")))
    }

    pub fn len(&self) -> usize {
        self.worlds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.worlds.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &World> {
        self.worlds.iter()
    }
}

/// Labeled set D, unlabeled set U and the two validation splits.
pub fn make_datasets(
    worlds: &WorldSet,
    seed: u64,
    n_labeled: usize,
    m_unlabeled: usize,
    split: &SplitSpec,
) -> Result<Datasets> {
    if split.train_worlds.is_empty() || split.unseen_worlds.is_empty() {
        return Err(Error::Dataset("empty world partition".into()));
    }
    if split.train_worlds.iter().any(|w| split.unseen_worlds.contains(w)) {
        return Err(Error::Dataset("train and unseen worlds overlap".into()));
    }
    for &w in split.train_worlds.iter().chain(&split.unseen_worlds) {
        worlds.get(w)?;
    }

    let sample = |pool: &[usize], tag: u64, i: usize, labeled: bool| -> Result<Episode> {
        let mut r = rng::rng_from(seed, &[tag, i as u64]);
        let world_id = pool[r.gen_range(0..pool.len())];
        let world = worlds.get(world_id)?;
        let path = world.sample_path(
            rng::derive_seed(seed, &[tag, i as u64, 1]),
            split.min_len,
            split.max_len,
        )?;
        let instruction = if labeled {
            Some(world.oracle_instruction(&path)?)
        } else {
            None
        };
        Ok(Episode {
            world_id,
            path,
            instruction,
        })
    };

    let labeled = (0..n_labeled)
        .map(|i| sample(&split.train_worlds, 100, i, true))
        .collect::<Result<Vec<_>>>()?;
    let unlabeled = (0..m_unlabeled)
        .map(|i| sample(&split.train_worlds, 101, i, false))
        .collect::<Result<Vec<_>>>()?;

    let seen_paths: BTreeSet<(usize, Vec<NodeId>)> = labeled
        .iter()
        .map(|e| (e.world_id, e.path.nodes.clone()))
        .collect();
    let mut val_seen = Vec::with_capacity(split.n_val_seen);
    let mut i = 0;
    while val_seen.len() < split.n_val_seen {
        let ep = sample(&split.train_worlds, 102, i, true)?;
        i += 1;
        if !seen_paths.contains(&(ep.world_id, ep.path.nodes.clone())) {
            val_seen.push(ep);
        }
        if i > 100 * (split.n_val_seen + 1) {
            return Err(Error::Dataset("could not find enough new val-seen paths".into()));
        }
    }
    let val_unseen = (0..split.n_val_unseen)
        .map(|i| sample(&split.unseen_worlds, 103, i, true))
        .collect::<Result<Vec<_>>>()?;
    Ok(Datasets {
        labeled,
        unlabeled,
        val_seen,
        val_unseen,
    })
}

// ---------------------------------------------------------------------------
// File formats

const WORLD_MAGIC: &str = "ccc-world";
const WORLD_VERSION: u32 = 1;

/// Text world file: a version header, then per world a `world <id> <w> <h>`
/// line followed by one line per node:
/// `x y  lN lE lS lW  nN nE nS nW`.
pub fn write_worlds(worlds: &WorldSet) -> String {
    let mut s = format!("{WORLD_MAGIC} {WORLD_VERSION}\n");
    for w in worlds.iter() {
        let _ = writeln!(s, "world {} {} {}", w.id, w.width, w.height);
        for v in 0..w.num_nodes() {
            let (x, y) = w.coords(v);
            let l = w.landmarks[v];
            let o = w.open[v].map(u8::from);
            let _ = writeln!(
                s,
                "{x} {y} {} {} {} {} {} {} {} {}",
                l[0], l[1], l[2], l[3], o[0], o[1], o[2], o[3]
            );
        }
    }
    s
}

pub fn read_worlds(text: &str) -> Result<WorldSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |n: usize, m: &str| Error::Parse(format!("world file line {}: {m}", n + 1));
    let (n0, header) = lines.next().ok_or_else(|| Error::Parse("empty world file".into()))?;
    let mut it = header.split_whitespace();
    if it.next() != Some(WORLD_MAGIC) {
        return Err(bad(n0, "missing ccc-world header"));
    }
    let version: u32 = it
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(n0, "missing version"))?;
    if version != WORLD_VERSION {
        return Err(bad(n0, &format!("unsupported version {version}")));
    }
    let mut worlds = Vec::new();
    let mut lines = lines.peekable();
    while let Some((n, line)) = lines.next() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 || f[0] != "world" {
            return Err(bad(n, "expected `world <id> <width> <height>`"));
        }
        let nums: Vec<usize> = f[1..]
            .iter()
            .map(|x| x.parse().map_err(|_| bad(n, "bad integer")))
            .collect::<Result<_>>()?;
        let (id, width, height) = (nums[0], nums[1], nums[2]);
        let count = width * height;
        let mut open = vec![[false; 4]; count];
        let mut landmarks = vec![[0u8; 4]; count];
        for _ in 0..count {
            let (n, line) = lines.next().ok_or_else(|| bad(n, "truncated world"))?;
            let v: Vec<usize> = line
                .split_whitespace()
                .map(|x| x.parse().map_err(|_| bad(n, "bad integer")))
                .collect::<Result<_>>()?;
            if v.len() != 10 || v[0] >= width || v[1] >= height {
                return Err(bad(n, "expected `x y lN lE lS lW nN nE nS nW`"));
            }
            let node = v[1] * width + v[0];
            for k in 0..4 {
                landmarks[node][k] = u8::try_from(v[2 + k]).map_err(|_| bad(n, "landmark"))?;
                open[node][k] = match v[6 + k] {
                    0 => false,
                    1 => true,
                    _ => return Err(bad(n, "navigability must be 0 or 1")),
                };
            }
        }
        worlds.push(World::from_parts(id, width, height, open, landmarks)?);
    }
    for (i, w) in worlds.iter().enumerate() {
        if w.id != i {
            return Err(Error::Parse(format!("world ids must be 0..n in order, found {} at {i}", w.id)));
        }
    }
    Ok(WorldSet { worlds })
}

/// One episode per line: `world-id \t nodes \t actions \t tokens` where nodes
/// are comma-separated ids, actions are `N,E,S,W,STOP` letters and tokens are
/// space-separated words (or `-` when unlabeled).
pub fn write_episodes(episodes: &[Episode]) -> String {
    let mut s = String::new();
    for e in episodes {
        let nodes: Vec<String> = e.path.nodes.iter().map(usize::to_string).collect();
        let mut actions: Vec<&str> = e.path.moves.iter().map(|d| d.letter()).collect();
        actions.push("STOP");
        let tokens = e
            .instruction
            .as_ref()
            .map_or_else(|| "-".to_string(), |t| vocab::render(t));
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            e.world_id,
            nodes.join(","),
            actions.join(","),
            tokens
        );
    }
    s
}

pub fn read_episodes(text: &str, worlds: &WorldSet) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse(format!("dataset line {}: {m}", n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 tab-separated fields"));
        }
        let world_id: usize = f[0].parse().map_err(|_| bad("bad world id"))?;
        let world = worlds.get(world_id)?;
        let nodes: Vec<NodeId> = f[1]
            .split(',')
            .map(|x| x.parse().map_err(|_| bad("bad node id")))
            .collect::<Result<_>>()?;
        let path = Path::from_nodes(world, nodes)?;
        let mut expect: Vec<&str> = path.moves.iter().map(|d| d.letter()).collect();
        expect.push("STOP");
        if f[2].split(',').collect::<Vec<_>>() != expect {
            return Err(bad("action list does not match node list"));
        }
        let instruction = if f[3] == "-" {
            None
        } else {
            let t: Vec<Token> = f[3]
                .split(' ')
                .map(|w| vocab::lookup(w).ok_or_else(|| bad(&format!("unknown token `{w}`"))))
                .collect::<Result<_>>()?;
            if t.first() != Some(&vocab::BOS) || t.last() != Some(&vocab::EOS) {
                return Err(bad("instruction must start with BOS and end with EOS"));
            }
            Some(t)
        };
        out.push(Episode {
            world_id,
            path,
            instruction,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Open `w x h` grid with every landmark set to `lm`.
    pub(crate) fn open_grid(w: usize, h: usize, lm: u8) -> World {
        let n = w * h;
        let mut open = vec![[false; 4]; n];
        for y in 0..h {
            for x in 0..w {
                let v = y * w + x;
                open[v] = [y > 0, x + 1 < w, y + 1 < h, x > 0];
            }
        }
        World::from_parts(0, w, h, open, vec![[lm; 4]; n]).unwrap()
    }

    fn flood_fill_count(w: &World) -> usize {
        let mut seen = vec![false; w.num_nodes()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for d in Dir::ALL {
                if let Some(u) = w.step(v, d) {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
        }
        seen.iter().filter(|&&s| s).count()
    }

    #[test]
    fn open_grid_counts() {
        let w = World::generate(7, 4, 4, 0.0).unwrap();
        assert_eq!(w.num_nodes(), 16);
        assert_eq!(w.num_edges(), 24);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = World::generate(7, 5, 4, 0.3).unwrap();
        let b = World::generate(7, 5, 4, 0.3).unwrap();
        let sa = write_worlds(&WorldSet::new(vec![a]));
        let sb = write_worlds(&WorldSet::new(vec![b]));
        assert_eq!(sa, sb);
    }

    #[test]
    fn walled_world_is_connected_by_flood_fill() {
        for seed in 0..20 {
            let w = World::generate(seed, 4, 4, 0.2).unwrap();
            assert_eq!(flood_fill_count(&w), 16);
            for v in 0..16 {
                let deg = w.neighbors(v).count();
                assert!((1..=4).contains(&deg));
            }
        }
    }

    #[test]
    fn bad_generation_parameters() {
        assert!(World::generate(1, 1, 4, 0.0).is_err());
        assert!(World::generate(1, 4, 4, 0.5).is_err());
    }

    #[test]
    fn subview_encoding() {
        let mut w = open_grid(3, 3, 0);
        // node 2 is the north-east corner: no east edge.
        let east = w.subview_features(2, Dir::E);
        assert_eq!(east[NAV_DIM], 0.0);
        let north = w.subview_features(4, Dir::N);
        assert_eq!((north[8], north[9]), (0.0, 1.0));
        w.landmarks[4][Dir::S.index()] = 2;
        let south = w.subview_features(4, Dir::S);
        assert_eq!(south[2], 1.0);
        assert_eq!(south.iter().take(8).sum::<f64>(), 1.0);
        assert_eq!(vocab::WORDS[vocab::landmark(2)], "plant");
    }

    #[test]
    fn observation_consistency() {
        let w = World::generate(3, 4, 4, 0.2).unwrap();
        let scene = w.observe_panoramic(5).unwrap();
        assert_eq!(scene.stop, vec![0.0; FEATURE_DIM]);
        let mut h = Dir::N;
        for _ in 0..4 {
            assert_eq!(w.observe_front(5, h).unwrap(), scene.subviews[h.index()]);
            h = h.right();
        }
        assert_eq!(h, Dir::N);
        assert!(w.observe_panoramic(99).is_err());
    }

    #[test]
    fn sample_path_lengths() {
        let w = World::generate(7, 4, 4, 0.0).unwrap();
        let p = w.sample_path(1, 2, 2).unwrap();
        assert_eq!(p.nodes.len(), 3);
        assert_eq!(p.num_actions(), 3);
        let p = w.sample_path(2, 1, 1).unwrap();
        assert!(w.direction_between(p.nodes[0], p.nodes[1]).is_some());
        for s in 0..50 {
            let w = World::generate(s, 5, 5, 0.3).unwrap();
            let p = w.sample_path(s, 2, 6).unwrap();
            assert_eq!(p.len_edges(), w.geodesic(p.start(), p.goal()).unwrap());
        }
        assert!(w.sample_path(1, 0, 3).is_err());
        assert!(w.sample_path(1, 9, 10).is_err());
    }

    #[test]
    fn geodesic_properties() {
        let w = World::generate(11, 5, 5, 0.3).unwrap();
        for a in 0..25 {
            assert_eq!(w.geodesic(a, a).unwrap(), 0);
            for b in 0..25 {
                let ab = w.geodesic(a, b).unwrap();
                assert_eq!(ab, w.geodesic(b, a).unwrap());
                for c in (0..25).step_by(3) {
                    assert!(ab <= w.geodesic(a, c).unwrap() + w.geodesic(c, b).unwrap());
                }
            }
        }
    }

    fn words(s: &str) -> Vec<Token> {
        s.split(' ').map(|w| vocab::lookup(w).unwrap()).collect()
    }

    #[test]
    fn grammar_two_moves_east() {
        let mut w = open_grid(4, 4, 0);
        w.landmarks[2][Dir::E.index()] = 2;
        let p = Path::from_moves(&w, 0, &[Dir::E, Dir::E]).unwrap();
        assert_eq!(
            w.oracle_instruction(&p).unwrap(),
            words("BOS walk east to the plant then stop at the plant EOS")
        );
    }

    #[test]
    fn grammar_one_move_north() {
        let w = open_grid(4, 4, 0);
        let p = Path::from_moves(&w, 4, &[Dir::N]).unwrap();
        assert_eq!(
            w.oracle_instruction(&p).unwrap(),
            words("BOS walk north to the door then stop at the door EOS")
        );
    }

    #[test]
    fn grammar_turn() {
        let mut w = open_grid(4, 4, 5);
        // start at 12 (bottom-left): east, east to node 14, north to node 10.
        w.landmarks[14][Dir::E.index()] = 2;
        w.landmarks[10][Dir::N.index()] = 0;
        let p = Path::from_moves(&w, 12, &[Dir::E, Dir::E, Dir::N]).unwrap();
        let t = w.oracle_instruction(&p).unwrap();
        assert_eq!(
            t,
            words("BOS walk east to the plant then walk north to the door then stop at the door EOS")
        );
        assert_eq!(t.iter().filter(|&&x| x == vocab::THE).count(), 3);
        let zero = Path::from_moves(&w, 0, &[]).unwrap();
        assert!(w.oracle_instruction(&zero).is_err());
    }

    fn split(train: Vec<usize>, unseen: Vec<usize>) -> SplitSpec {
        SplitSpec {
            train_worlds: train,
            unseen_worlds: unseen,
            n_val_seen: 10,
            n_val_unseen: 10,
            min_len: 2,
            max_len: 5,
        }
    }

    #[test]
    fn datasets_partition() {
        let ws = WorldSet::generate(3, 5, &[(5, 5)], 0.2).unwrap();
        let d = make_datasets(&ws, 9, 100, 30, &split(vec![0, 1, 2], vec![3, 4])).unwrap();
        assert_eq!(d.labeled.len(), 100);
        assert_eq!(d.unlabeled.len(), 30);
        assert!(d.labeled.iter().chain(&d.unlabeled).all(|e| e.world_id <= 2));
        assert!(d.val_unseen.iter().all(|e| e.world_id >= 3));
        assert!(d.unlabeled.iter().all(|e| !e.is_labeled()));
        for e in &d.labeled {
            let w = ws.get(e.world_id).unwrap();
            assert_eq!(e.instruction.as_ref().unwrap(), &w.oracle_instruction(&e.path).unwrap());
        }
        assert!(make_datasets(&ws, 9, 1, 1, &split(vec![], vec![3])).is_err());
    }

    #[test]
    fn file_formats_round_trip() {
        let ws = WorldSet::generate(5, 3, &[(4, 4), (5, 3)], 0.3).unwrap();
        let text = write_worlds(&ws);
        let back = read_worlds(&text).unwrap();
        assert_eq!(back, ws);
        let d = make_datasets(&ws, 1, 5, 3, &split(vec![0, 1], vec![2])).unwrap();
        let mut eps = d.labeled.clone();
        eps.extend(d.unlabeled.clone());
        let text = write_episodes(&eps);
        assert_eq!(read_episodes(&text, &ws).unwrap(), eps);
        assert!(read_worlds("ccc-world 9\n").is_err());
        assert!(read_episodes("0\t0,5\tE,STOP\t-\n", &ws).is_err());
    }
}
