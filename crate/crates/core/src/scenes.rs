//! Procedural scene corpus: background bands ("stuff") with stamped
//! rectangles and ellipses ("things") that tile the grid exactly, plus the
//! scene graphs derived from their boxes.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geometry::{box_from_layout, infer_relation, BoundingBox, Layout, LayoutSet};
use crate::graph::{Edge, SceneGraph, Vocab};
use crate::rle::{self, RleError};
use crate::seeding;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("could not generate scene after {0} attempts")]
    Exhausted(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported dataset version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated dataset: header announces {expected} records, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("record {id}: {source}")]
    Rle { id: usize, source: RleError },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Band {
    Top,
    Bottom,
}

/// How a class is drawn. Sizes and vertical placement are fractions of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassStyle {
    Stuff { band: Band },
    Thing { shape: Shape, width: (f64, f64), height: Option<(f64, f64)>, center_y: (f64, f64) },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub style: ClassStyle,
}

pub fn default_palette() -> Vec<ClassSpec> {
    let stuff = |name: &str, band| ClassSpec { name: name.into(), style: ClassStyle::Stuff { band } };
    let thing = |name: &str, shape, width, height, center_y| ClassSpec {
        name: name.into(),
        style: ClassStyle::Thing { shape, width, height, center_y },
    };
    vec![
        stuff("sky", Band::Top),
        stuff("wall", Band::Top),
        stuff("grass", Band::Bottom),
        stuff("sea", Band::Bottom),
        stuff("road", Band::Bottom),
        thing("sun", Shape::Ellipse, (0.16, 0.25), None, (0.12, 0.35)),
        thing("cloud", Shape::Ellipse, (0.3, 0.45), Some((0.12, 0.2)), (0.1, 0.35)),
        thing("tree", Shape::Rect, (0.12, 0.2), Some((0.3, 0.45)), (0.45, 0.75)),
        thing("house", Shape::Rect, (0.25, 0.38), Some((0.22, 0.32)), (0.5, 0.8)),
        thing("person", Shape::Rect, (0.1, 0.15), Some((0.25, 0.35)), (0.55, 0.85)),
        thing("ball", Shape::Ellipse, (0.12, 0.18), None, (0.65, 0.9)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Upper bound on retained edges per scene.
    pub max_edges: usize,
    /// Objects left with fewer pixels than this after occlusion force a retry.
    pub min_pixels: usize,
    pub max_attempts: usize,
    pub palette: Vec<ClassSpec>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 32,
            width: 32,
            min_objects: 3,
            max_objects: 5,
            max_edges: 8,
            min_pixels: 8,
            max_attempts: 200,
            palette: default_palette(),
        }
    }
}

impl SceneConfig {
    pub fn vocab(&self) -> Vocab {
        let names: Vec<&str> = self.palette.iter().map(|c| c.name.as_str()).collect();
        Vocab::new(&names).expect("palette names are unique")
    }

    fn validate(&self) -> Result<(), SceneError> {
        let pow2 = |v: usize| v >= 4 && v.is_power_of_two();
        if !pow2(self.height) || !pow2(self.width) {
            return Err(SceneError::Config("H and W must be powers of two >= 4".into()));
        }
        if self.min_objects < 2 || self.min_objects > self.max_objects || self.max_objects > 6 {
            return Err(SceneError::Config(format!(
                "object range {}..={} must lie within 2..=6 (up to 2 bands + 4 things)",
                self.min_objects, self.max_objects
            )));
        }
        if self.max_edges + 1 < self.max_objects {
            return Err(SceneError::Config(format!(
                "max_edges {} cannot connect {} objects",
                self.max_edges, self.max_objects
            )));
        }
        let has = |pred: fn(&ClassStyle) -> bool| self.palette.iter().any(|c| pred(&c.style));
        if !has(|s| matches!(s, ClassStyle::Stuff { band: Band::Top }))
            || !has(|s| matches!(s, ClassStyle::Stuff { band: Band::Bottom }))
            || !has(|s| matches!(s, ClassStyle::Thing { .. }))
        {
            return Err(SceneError::Config("palette needs top stuff, bottom stuff and things".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub class: usize,
    pub layout: Layout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: usize,
    pub height: usize,
    pub width: usize,
    pub objects: Vec<SceneObject>,
    pub graph: SceneGraph,
}

impl Scene {
    pub fn layouts(&self) -> LayoutSet {
        LayoutSet { layouts: self.objects.iter().map(|o| o.layout.clone()).collect() }
    }

    pub fn boxes(&self) -> Vec<BoundingBox> {
        self.objects
            .iter()
            .map(|o| box_from_layout(&o.layout, 0.5).expect("scene objects are nonempty"))
            .collect()
    }

    /// True when every pixel belongs to exactly one object.
    pub fn tiles_grid(&self) -> bool {
        (0..self.height * self.width).all(|p| {
            let total: f64 = self.objects.iter().map(|o| o.layout.data[p]).sum();
            total == 1.0
        })
    }

    /// Edges whose relation disagrees with the objects' boxes.
    pub fn inconsistent_edges(&self, vocab: &Vocab) -> Vec<usize> {
        let boxes = self.boxes();
        self.graph
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| vocab.relation_of(e.rel) != Some(infer_relation(&boxes[e.src], &boxes[e.dst])))
            .map(|(k, _)| k)
            .collect()
    }
}

fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

fn stamp_attempt(rng: &mut impl Rng, config: &SceneConfig) -> Option<(Vec<usize>, Vec<usize>)> {
    let (h, w) = (config.height, config.width);
    let n = rng.random_range(config.min_objects..=config.max_objects);
    let bands = match n {
        2 => 1,
        6 => 2,
        _ => rng.random_range(1..=2),
    };
    let pick = |rng: &mut dyn rand::RngCore, pred: &dyn Fn(&ClassStyle) -> bool| -> usize {
        let options: Vec<usize> = (0..config.palette.len()).filter(|&k| pred(&config.palette[k].style)).collect();
        options[rng.random_range(0..options.len())]
    };
    let mut owner = vec![0usize; h * w];
    let mut classes = Vec::with_capacity(n);
    if bands == 1 {
        classes.push(pick(rng, &|s| matches!(s, ClassStyle::Stuff { .. })));
    } else {
        classes.push(pick(rng, &|s| matches!(s, ClassStyle::Stuff { band: Band::Top })));
        classes.push(pick(rng, &|s| matches!(s, ClassStyle::Stuff { band: Band::Bottom })));
        let split = rng.random_range(h / 4..=3 * h / 4);
        owner[split * w..].iter_mut().for_each(|o| *o = 1);
    }
    for obj in bands..n {
        let class = pick(rng, &|s| matches!(s, ClassStyle::Thing { .. }));
        classes.push(class);
        let ClassStyle::Thing { shape, width, height, center_y } = &config.palette[class].style else {
            unreachable!("picked a thing class")
        };
        let fw = uniform(rng, *width);
        let fh = height.map_or(fw * w as f64 / h as f64, |r| uniform(rng, r));
        let pw = ((fw * w as f64).round() as usize).clamp(2, w);
        let ph = ((fh * h as f64).round() as usize).clamp(2, h);
        let cy = uniform(rng, *center_y) * h as f64;
        let top = ((cy - ph as f64 / 2.0).round().max(0.0) as usize).min(h - ph);
        let left = rng.random_range(0..=w - pw);
        for r in top..top + ph {
            for c in left..left + pw {
                let inside = match shape {
                    Shape::Rect => true,
                    Shape::Ellipse => {
                        let dy = (r - top) as f64 + 0.5 - ph as f64 / 2.0;
                        let dx = (c - left) as f64 + 0.5 - pw as f64 / 2.0;
                        (dx / (pw as f64 / 2.0)).powi(2) + (dy / (ph as f64 / 2.0)).powi(2) <= 1.0
                    }
                };
                if inside {
                    owner[r * w + c] = obj;
                }
            }
        }
    }
    let mut counts = vec![0usize; n];
    owner.iter().for_each(|&o| counts[o] += 1);
    counts.iter().all(|&c| c >= config.min_pixels).then_some((classes, owner))
}

fn weakly_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        parent[x] = root;
        root
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    let root = find(&mut parent, 0);
    (0..n).all(|x| find(&mut parent, x) == root)
}

/// Uniform random subset of `min(max_edges, n(n-1))` ordered pairs that keeps
/// the objects weakly connected.
fn sample_edges(rng: &mut impl Rng, n: usize, max_edges: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let k = max_edges.min(all.len());
    for _ in 0..1000 {
        let mut idx = sample(rng, all.len(), k).into_vec();
        idx.sort_unstable();
        let chosen: Vec<_> = idx.into_iter().map(|i| all[i]).collect();
        if weakly_connected(n, &chosen) {
            return chosen;
        }
    }
    // Rejection failed; fall back to a random spanning chain plus fill.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut chosen: Vec<_> = order.windows(2).map(|p| (p[0], p[1])).collect();
    let rest: Vec<_> = all.iter().copied().filter(|e| !chosen.contains(e)).collect();
    for i in sample(rng, rest.len(), k - chosen.len()).into_iter() {
        chosen.push(rest[i]);
    }
    chosen.sort_unstable();
    chosen
}

/// Generates one scene; a pure function of `(seed, config)`.
pub fn generate_scene(seed: u64, id: usize, config: &SceneConfig) -> Result<Scene, SceneError> {
    config.validate()?;
    let vocab = config.vocab();
    let mut rng = seeding::rng(seed);
    for _ in 0..config.max_attempts {
        let Some((classes, owner)) = stamp_attempt(&mut rng, config) else {
            continue;
        };
        let n = classes.len();
        let (h, w) = (config.height, config.width);
        let objects: Vec<SceneObject> = classes
            .iter()
            .enumerate()
            .map(|(k, &class)| {
                let data = owner.iter().map(|&o| if o == k { 1.0 } else { 0.0 }).collect();
                SceneObject { class, layout: Layout { height: h, width: w, data } }
            })
            .collect();
        let boxes: Vec<BoundingBox> =
            objects.iter().map(|o| box_from_layout(&o.layout, 0.5).expect("nonempty")).collect();
        let edges = sample_edges(&mut rng, n, config.max_edges)
            .into_iter()
            .map(|(s, o)| Edge::new(s, vocab.relation_index(infer_relation(&boxes[s], &boxes[o])), o))
            .collect();
        let graph = SceneGraph::new(classes, edges);
        return Ok(Scene { id, height: h, width: w, objects, graph });
    }
    Err(SceneError::Exhausted(config.max_attempts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub vocab: Vocab,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub seed: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn vocab(&self) -> &Vocab {
        &self.header.vocab
    }

    /// Splits off the last `held_out` scenes.
    pub fn split(&self, held_out: usize) -> (Dataset, Dataset) {
        let cut = self.scenes.len().saturating_sub(held_out);
        let part = |scenes: &[Scene]| Dataset {
            header: DatasetHeader { count: scenes.len(), ..self.header.clone() },
            scenes: scenes.to_vec(),
        };
        (part(&self.scenes[..cut]), part(&self.scenes[cut..]))
    }
}

pub fn generate_dataset(count: usize, config: &SceneConfig, seed: u64) -> Result<Dataset, SceneError> {
    config.validate()?;
    let scenes = (0..count)
        .into_par_iter()
        .map(|i| generate_scene(seeding::derive(seed, seeding::tags::SCENE, i as u64), i, config))
        .collect::<Result<Vec<_>, _>>()?;
    let header = DatasetHeader {
        version: DATASET_VERSION,
        vocab: config.vocab(),
        height: config.height,
        width: config.width,
        seed,
        count,
    };
    Ok(Dataset { header, scenes })
}

pub fn write_dataset(d: &Dataset, out: &mut impl Write) -> Result<(), SceneError> {
    writeln!(out, "{}", serde_json::to_string(&d.header).expect("header serializes"))?;
    for scene in &d.scenes {
        let objects: Vec<Value> = scene
            .objects
            .iter()
            .map(|o| json!({"class": o.class, "rle": rle::encode(o.layout.data.iter().map(|&v| v >= 0.5))}))
            .collect();
        let edges: Vec<[usize; 3]> = scene.graph.edges.iter().map(|e| [e.src, e.rel, e.dst]).collect();
        let record = json!({"id": scene.id, "objects": objects, "edges": edges});
        writeln!(out, "{record}")?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    class: usize,
    rle: Vec<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    id: usize,
    objects: Vec<ObjectRecord>,
    edges: Vec<[usize; 3]>,
}

pub fn read_dataset(input: impl BufRead) -> Result<Dataset, SceneError> {
    let mut lines = input.lines();
    let parse_err = |line: usize, e: serde_json::Error| SceneError::Parse { line, message: e.to_string() };
    let first = lines.next().ok_or(SceneError::Parse { line: 1, message: "missing header".into() })??;
    let raw: Value = serde_json::from_str(&first).map_err(|e| parse_err(1, e))?;
    let version = raw.get("version").and_then(Value::as_u64).unwrap_or(0) as u32;
    if version != DATASET_VERSION {
        return Err(SceneError::Version { found: version, expected: DATASET_VERSION });
    }
    let header: DatasetHeader = serde_json::from_value(raw).map_err(|e| parse_err(1, e))?;
    header.vocab.check().map_err(|e| SceneError::Parse { line: 1, message: e.to_string() })?;
    let (h, w) = (header.height, header.width);
    let mut scenes = Vec::with_capacity(header.count);
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SceneRecord = serde_json::from_str(&line).map_err(|e| parse_err(k + 2, e))?;
        let mut objects = Vec::with_capacity(record.objects.len());
        for o in &record.objects {
            let bits = rle::decode(&o.rle, h * w).map_err(|source| SceneError::Rle { id: record.id, source })?;
            let data = bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
            objects.push(SceneObject { class: o.class, layout: Layout { height: h, width: w, data } });
        }
        let graph = SceneGraph::new(
            objects.iter().map(|o| o.class).collect(),
            record.edges.iter().map(|&[s, r, o]| Edge::new(s, r, o)).collect(),
        );
        let violations = graph.validate(&header.vocab);
        if !violations.is_empty() {
            return Err(SceneError::Parse { line: k + 2, message: violations.join("; ") });
        }
        scenes.push(Scene { id: record.id, height: h, width: w, objects, graph });
    }
    if scenes.len() != header.count {
        return Err(SceneError::Truncated { expected: header.count, found: scenes.len() });
    }
    Ok(Dataset { header, scenes })
}

pub fn save_dataset(d: &Dataset, path: &std::path::Path) -> Result<(), SceneError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(d, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &std::path::Path) -> Result<Dataset, SceneError> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Canonical form of a scene graph: nodes sorted by (class, degree), edges
/// relabeled and sorted lexicographically.
pub fn canonical_graph(g: &SceneGraph) -> (Vec<usize>, Vec<(usize, usize, usize)>) {
    let mut degree = vec![0usize; g.num_nodes()];
    for e in &g.edges {
        degree[e.src] += 1;
        degree[e.dst] += 1;
    }
    let mut order: Vec<usize> = (0..g.num_nodes()).collect();
    order.sort_by_key(|&i| (g.classes[i], degree[i]));
    let mut rank = vec![0usize; order.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let classes = order.iter().map(|&i| g.classes[i]).collect();
    let mut edges: Vec<_> = g.edges.iter().map(|e| (rank[e.src], e.rel, rank[e.dst])).collect();
    edges.sort_unstable();
    (classes, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DuplicationStats {
    /// Fraction of scenes whose class multiset occurs in at least two scenes.
    pub shared_multiset: f64,
    /// Fraction of distinct graphs that describe at least two scenes.
    pub graphs_multi: f64,
    /// Fraction of distinct graphs that describe more than ten scenes.
    pub graphs_over_ten: f64,
    pub distinct_graphs: usize,
}

pub fn sg_duplication_stats(d: &Dataset) -> DuplicationStats {
    let scenes = d.scenes.len().max(1) as f64;
    let mut multisets: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut graphs: BTreeMap<_, usize> = BTreeMap::new();
    for scene in &d.scenes {
        let mut classes = scene.graph.classes.clone();
        classes.sort_unstable();
        *multisets.entry(classes).or_default() += 1;
        *graphs.entry(canonical_graph(&scene.graph)).or_default() += 1;
    }
    let shared = d
        .scenes
        .iter()
        .filter(|s| {
            let mut classes = s.graph.classes.clone();
            classes.sort_unstable();
            multisets[&classes] >= 2
        })
        .count();
    let distinct = graphs.len().max(1) as f64;
    DuplicationStats {
        shared_multiset: shared as f64 / scenes,
        graphs_multi: graphs.values().filter(|&&c| c >= 2).count() as f64 / distinct,
        graphs_over_ten: graphs.values().filter(|&&c| c > 10).count() as f64 / distinct,
        distinct_graphs: graphs.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Relation;

    fn scene_with(classes: Vec<usize>, edges: Vec<Edge>) -> Scene {
        Scene {
            id: 0,
            height: 4,
            width: 4,
            objects: classes.iter().map(|&c| SceneObject { class: c, layout: Layout::zeros(4, 4) }).collect(),
            graph: SceneGraph::new(classes, edges),
        }
    }

    fn dataset_of(scenes: Vec<Scene>) -> Dataset {
        let config = SceneConfig::default();
        Dataset {
            header: DatasetHeader {
                version: 1,
                vocab: config.vocab(),
                height: 4,
                width: 4,
                seed: 0,
                count: scenes.len(),
            },
            scenes,
        }
    }

    /// Brute-force typed isomorphism over all node permutations.
    fn isomorphic(a: &SceneGraph, b: &SceneGraph) -> bool {
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for k in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(k, n - 1);
                    out.push(q);
                }
            }
            out
        }
        if a.num_nodes() != b.num_nodes() || a.edges.len() != b.edges.len() {
            return false;
        }
        let mut eb: Vec<_> = b.edges.iter().map(|e| (e.src, e.rel, e.dst)).collect();
        eb.sort_unstable();
        permutations(a.num_nodes()).into_iter().any(|p| {
            (0..a.num_nodes()).all(|i| a.classes[i] == b.classes[p[i]]) && {
                let mut ea: Vec<_> = a.edges.iter().map(|e| (p[e.src], e.rel, p[e.dst])).collect();
                ea.sort_unstable();
                ea == eb
            }
        })
    }

    #[test]
    fn generation_is_deterministic() {
        let config = SceneConfig { min_objects: 3, max_objects: 3, ..Default::default() };
        let a = generate_scene(0, 0, &config).unwrap();
        let b = generate_scene(0, 0, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objects.len(), 3);
        assert_ne!(a, generate_scene(1, 0, &config).unwrap());
    }

    #[test]
    fn generated_scenes_tile_and_agree_with_boxes() {
        let config = SceneConfig::default();
        let vocab = config.vocab();
        for seed in 0..200 {
            let s = generate_scene(seed, 0, &config).unwrap();
            assert!(s.tiles_grid(), "seed {seed}");
            assert!(s.inconsistent_edges(&vocab).is_empty(), "seed {seed}");
            assert!(s.graph.validate(&vocab).is_empty());
            let n = s.objects.len();
            assert!((3..=5).contains(&n));
            assert_eq!(s.graph.edges.len(), 8usize.min(n * (n - 1)));
            let pairs: Vec<_> = s.graph.edges.iter().map(|e| (e.src, e.dst)).collect();
            assert!(weakly_connected(n, &pairs));
            assert!(s.objects.iter().all(|o| o.layout.active_count(0.5) >= 8));
        }
    }

    #[test]
    fn tiny_grid_exhausts_retries() {
        let config = SceneConfig { height: 4, width: 4, min_objects: 6, max_objects: 6, max_edges: 8, ..Default::default() };
        assert!(matches!(generate_scene(3, 0, &config), Err(SceneError::Exhausted(_))));
    }

    #[test]
    fn bad_config_rejected() {
        let config = SceneConfig { height: 24, ..Default::default() };
        assert!(matches!(generate_scene(0, 0, &config), Err(SceneError::Config(_))));
        let config = SceneConfig { max_objects: 9, ..Default::default() };
        assert!(matches!(generate_scene(0, 0, &config), Err(SceneError::Config(_))));
    }

    #[test]
    fn dataset_round_trip() {
        let d = generate_dataset(100, &SceneConfig::default(), 5).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back, d);
        let mut again = Vec::new();
        write_dataset(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn header_only_dataset() {
        let d = generate_dataset(0, &SceneConfig::default(), 5).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1);
        let back = read_dataset(&buf[..]).unwrap();
        assert!(back.scenes.is_empty());
    }

    #[test]
    fn corrupted_and_truncated_files() {
        let d = generate_dataset(3, &SceneConfig::default(), 5).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();

        let mut record: Value = serde_json::from_str(&lines[2]).unwrap();
        let runs = record["objects"][0]["rle"].as_array_mut().unwrap();
        let first = runs[0].as_u64().unwrap();
        runs[0] = json!(first + 3);
        lines[2] = record.to_string();
        match read_dataset(lines.join("\n").as_bytes()) {
            Err(SceneError::Rle { id, .. }) => assert_eq!(id, 1),
            other => panic!("{other:?}"),
        }

        let truncated = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(matches!(read_dataset(truncated.as_bytes()), Err(SceneError::Truncated { expected: 3, found: 2 })));

        let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(read_dataset(bumped.as_bytes()), Err(SceneError::Version { found: 2, .. })));
    }

    #[test]
    fn multiset_stats() {
        let same = dataset_of(vec![scene_with(vec![0, 5], vec![]), scene_with(vec![5, 0], vec![])]);
        assert_eq!(sg_duplication_stats(&same).shared_multiset, 1.0);
        let distinct = dataset_of(vec![scene_with(vec![0, 5], vec![]), scene_with(vec![1, 5], vec![])]);
        assert_eq!(sg_duplication_stats(&distinct).shared_multiset, 0.0);
    }

    #[test]
    fn graph_stats_match_isomorphism_oracle() {
        let vocab = SceneConfig::default().vocab();
        let left = vocab.relation_index(Relation::LeftOf);
        let inside = vocab.relation_index(Relation::Inside);
        let shared = |perm: [usize; 3]| {
            // Same graph {sky, tree, person} with node ids permuted.
            let classes = [0, 7, 9];
            let mut cls = vec![0; 3];
            for i in 0..3 {
                cls[perm[i]] = classes[i];
            }
            let edges = vec![Edge::new(perm[1], inside, perm[0]), Edge::new(perm[1], left, perm[2])];
            scene_with(cls, edges)
        };
        let mut scenes = vec![shared([0, 1, 2]), shared([2, 0, 1]), shared([1, 2, 0]), shared([0, 1, 2])];
        for k in 0..6 {
            scenes.push(scene_with(vec![k % 5, 5 + k % 6, 5 + (k + 1) % 6], vec![Edge::new(0, left, k % 2 + 1)]));
        }
        let d = dataset_of(scenes);
        let graphs: Vec<&SceneGraph> = d.scenes.iter().map(|s| &s.graph).collect();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, g) in graphs.iter().enumerate() {
            match groups.iter_mut().find(|grp| isomorphic(graphs[grp[0]], g)) {
                Some(grp) => grp.push(i),
                None => groups.push(vec![i]),
            }
        }
        let expected_multi = groups.iter().filter(|g| g.len() >= 2).count() as f64 / groups.len() as f64;
        let stats = sg_duplication_stats(&d);
        assert_eq!(stats.distinct_graphs, groups.len());
        assert_eq!(stats.graphs_multi, expected_multi);
        assert_eq!(stats.graphs_multi, 1.0 / 7.0);
        assert_eq!(stats.graphs_over_ten, 0.0);
    }
}
