//! Loop-transformation tree mode: a loop nest is an object tree, a search
//! node is a stack of transformations (tiling, interchange,
//! thread-parallelization) applied to it, and the tuner explores the tree of
//! stacks directly — no per-benchmark parameter file.
//!
//! Loop structure comes from a sidecar annotation file naming the loops and
//! their nesting, not from parsing C. Every transformation emits one
//! `#pragma clang loop(...)` line; a stack is instantiated into the source
//! by replacing a marker line with the stack's pragmas (outermost-applied
//! transformation farthest from the loop, since the pragma nearest the loop
//! applies first). Transformed loops get fresh names (`loop7`, `loop8`, …)
//! so later transformations can target them; untargeted loops keep their
//! identifiers. The compiler is the validity oracle: a stack whose compile
//! fails is marked rejected and its subtree is pruned.
//!
//! Tiling a chain of loops doubles its length, so the number of children of
//! a node grows combinatorially with stacked tilings (a 12-deep chain
//! already has half a billion interchanges). The search therefore never
//! materializes child lists: it counts the children of an expanded node
//! exactly and draws uniformly among the unexplored ones by index, building
//! only the drawn child. [`derive_children`] is the same enumeration in
//! eager form, usable on small nests.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TILE_CHOICES: [u64; 2] = [2, 4];
pub const MAX_STACK_DEPTH: usize = 4;
pub const EXPLOIT_PROBABILITY: f64 = 0.7;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("loop name `{0}` appears more than once")]
    DuplicateName(String),
    #[error("no loop named `{0}`")]
    UnknownLoop(String),
    #[error("loop `{0}` is not transformable")]
    NotTransformable(String),
    #[error("{0}")]
    NotAChain(String),
    #[error("{0}")]
    BadTransformation(String),
    #[error("marker `{0}` not found in source")]
    MarkerMissing(String),
    #[error("marker `{0}` appears more than once in source")]
    MarkerAmbiguous(String),
    #[error("annotation: {0}")]
    BadAnnotation(String),
    #[error("search settings: {0}")]
    BadSettings(String),
    #[error("a node has more children than the search can index; \
             reduce nest depth, tile choices, or the stack depth cap")]
    ChildOverflow,
    #[error("the untransformed source failed to evaluate; nothing to search")]
    RootRejected,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Parse(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, TreeError>;

fn default_transformable() -> bool {
    true
}

/// One loop in the nest. `transformable` is false once the loop has been
/// thread-parallelized; such a loop is never targeted again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopNode {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<LoopNode>,
    #[serde(default = "default_transformable", skip_serializing_if = "Clone::clone")]
    pub transformable: bool,
}

impl LoopNode {
    pub fn new(name: impl Into<String>, children: Vec<LoopNode>) -> Self {
        LoopNode { name: name.into(), children, transformable: true }
    }

    pub fn leaf(name: impl Into<String>) -> Self {
        Self::new(name, Vec::new())
    }
}

/// Sidecar file tying a source file to its loop structure: which file, which
/// marker line receives the pragma stack, and the loop tree itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopAnnotation {
    /// Source file name the annotation describes.
    pub source: String,
    /// Exact text of the line (typically a comment) the pragma stack
    /// replaces. Must occur exactly once in the source.
    pub marker: String,
    pub loops: Vec<LoopNode>,
}

impl LoopAnnotation {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let annotation: LoopAnnotation =
            serde_json::from_str(&std::fs::read_to_string(path)?)?;
        annotation.check()?;
        Ok(annotation)
    }

    pub fn check(&self) -> Result<()> {
        if self.source.is_empty() {
            return Err(TreeError::BadAnnotation("source must not be empty".into()));
        }
        if self.marker.trim().is_empty() {
            return Err(TreeError::BadAnnotation("marker must not be empty".into()));
        }
        if self.loops.is_empty() {
            return Err(TreeError::BadAnnotation("at least one loop is required".into()));
        }
        LoopNest::from_loops(self.loops.clone()).map(|_| ())
    }
}

/// One transformation step. Tile and interchange targets must form a chain
/// of consecutively nested loops, each the only child of the previous one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transformation {
    Tile { targets: Vec<String>, sizes: Vec<u64> },
    /// `order` is the targets in their new outermost-to-innermost sequence.
    Interchange { targets: Vec<String>, order: Vec<String> },
    Parallelize { target: String },
}

/// A loop forest plus the counter from which fresh loop names are drawn.
/// The counter starts past every numeric suffix present, so fresh names
/// never collide, and it travels with the nest: the names produced by a
/// stack of transformations depend only on the stack.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopNest {
    roots: Vec<LoopNode>,
    next_fresh: u64,
}

fn trailing_number(name: &str) -> u64 {
    let digits: String = name
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().unwrap_or(0)
}

fn collect_names<'n>(nodes: &'n [LoopNode], out: &mut Vec<&'n str>) {
    for node in nodes {
        out.push(&node.name);
        collect_names(&node.children, out);
    }
}

impl LoopNest {
    pub fn from_annotation(annotation: &LoopAnnotation) -> Result<Self> {
        Self::from_loops(annotation.loops.clone())
    }

    pub fn from_loops(roots: Vec<LoopNode>) -> Result<Self> {
        let mut names = Vec::new();
        collect_names(&roots, &mut names);
        let mut seen = HashSet::new();
        let mut max_suffix = 0;
        for name in names {
            if name.is_empty() {
                return Err(TreeError::BadAnnotation("empty loop name".into()));
            }
            if !seen.insert(name) {
                return Err(TreeError::DuplicateName(name.to_string()));
            }
            max_suffix = max_suffix.max(trailing_number(name));
        }
        Ok(LoopNest { roots, next_fresh: max_suffix + 1 })
    }

    pub fn roots(&self) -> &[LoopNode] {
        &self.roots
    }

    pub fn loop_count(&self) -> usize {
        let mut names = Vec::new();
        collect_names(&self.roots, &mut names);
        names.len()
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        collect_names(&self.roots, &mut names);
        names.into_iter().map(str::to_string).collect()
    }

    fn fresh(&mut self) -> String {
        let name = format!("loop{}", self.next_fresh);
        self.next_fresh += 1;
        name
    }

    fn find_mut<'n>(nodes: &'n mut [LoopNode], name: &str) -> Option<&'n mut LoopNode> {
        for node in nodes {
            if node.name == name {
                return Some(node);
            }
            if let Some(found) = Self::find_mut(&mut node.children, name) {
                return Some(found);
            }
        }
        None
    }

    /// Locate the child-list slot holding `name`, anywhere in the forest.
    fn slot_of<'n>(
        nodes: &'n mut Vec<LoopNode>,
        name: &str,
    ) -> Option<(&'n mut Vec<LoopNode>, usize)> {
        let here = nodes.iter().position(|n| n.name == name);
        if let Some(i) = here {
            return Some((nodes, i));
        }
        for node in nodes {
            if let Some(found) = Self::slot_of(&mut node.children, name) {
                return Some(found);
            }
        }
        None
    }

    /// Verify `targets` is a chain of consecutively nested transformable
    /// loops starting at `targets[0]`, and return the innermost's children.
    fn check_chain(&self, targets: &[String]) -> Result<Vec<LoopNode>> {
        if targets.is_empty() {
            return Err(TreeError::BadTransformation("no target loops".into()));
        }
        let mut nest = self.clone();
        let mut node = Self::find_mut(&mut nest.roots, &targets[0])
            .ok_or_else(|| TreeError::UnknownLoop(targets[0].clone()))?;
        for (i, name) in targets.iter().enumerate() {
            if i > 0 {
                if node.children.len() != 1 || node.children[0].name != *name {
                    return Err(TreeError::NotAChain(format!(
                        "`{name}` is not the only loop directly inside `{}`",
                        node.name
                    )));
                }
                node = &mut node.children[0];
            }
            if !node.transformable {
                return Err(TreeError::NotTransformable(name.clone()));
            }
        }
        Ok(node.children.clone())
    }

    /// Apply one transformation, returning the transformed nest and the
    /// pragma line that requests it.
    pub fn apply(&self, t: &Transformation) -> Result<(LoopNest, String)> {
        match t {
            Transformation::Tile { targets, sizes } => self.apply_tile(targets, sizes),
            Transformation::Interchange { targets, order } => {
                self.apply_interchange(targets, order)
            }
            Transformation::Parallelize { target } => self.apply_parallelize(target),
        }
    }

    fn apply_tile(&self, targets: &[String], sizes: &[u64]) -> Result<(LoopNest, String)> {
        if targets.len() != sizes.len() {
            return Err(TreeError::BadTransformation(format!(
                "{} targets but {} tile sizes",
                targets.len(),
                sizes.len()
            )));
        }
        if sizes.iter().any(|&s| s < 2) {
            return Err(TreeError::BadTransformation("tile sizes must be at least 2".into()));
        }
        let inner_children = self.check_chain(targets)?;

        let mut nest = self.clone();
        // Tiling k loops replaces them with k floor loops wrapping k tile
        // loops; the old innermost body moves under the innermost tile loop.
        let floors: Vec<String> = targets.iter().map(|_| nest.fresh()).collect();
        let tiles: Vec<String> = targets.iter().map(|_| nest.fresh()).collect();
        let mut replacement = LoopNode::new(tiles.last().unwrap().clone(), inner_children);
        for name in tiles.iter().rev().skip(1) {
            replacement = LoopNode::new(name.clone(), vec![replacement]);
        }
        for name in floors.iter().rev() {
            replacement = LoopNode::new(name.clone(), vec![replacement]);
        }
        let (slot, i) =
            Self::slot_of(&mut nest.roots, &targets[0]).expect("chain head located above");
        slot[i] = replacement;

        let pragma = format!(
            "#pragma clang loop({}) tile sizes({}) floor_ids({}) tile_ids({})",
            targets.join(","),
            sizes.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            floors.join(","),
            tiles.join(","),
        );
        Ok((nest, pragma))
    }

    fn apply_interchange(&self, targets: &[String], order: &[String]) -> Result<(LoopNest, String)> {
        if targets.len() < 2 {
            return Err(TreeError::BadTransformation(
                "interchange needs at least two loops".into(),
            ));
        }
        let mut sorted_targets: Vec<&String> = targets.iter().collect();
        let mut sorted_order: Vec<&String> = order.iter().collect();
        sorted_targets.sort();
        sorted_order.sort();
        if sorted_targets != sorted_order {
            return Err(TreeError::BadTransformation(format!(
                "permutation ({}) is not a reordering of the targets ({})",
                order.join(","),
                targets.join(",")
            )));
        }
        let inner_children = self.check_chain(targets)?;

        let mut nest = self.clone();
        let fresh: Vec<String> = targets.iter().map(|_| nest.fresh()).collect();
        let mut replacement = LoopNode::new(fresh.last().unwrap().clone(), inner_children);
        for name in fresh.iter().rev().skip(1) {
            replacement = LoopNode::new(name.clone(), vec![replacement]);
        }
        let (slot, i) =
            Self::slot_of(&mut nest.roots, &targets[0]).expect("chain head located above");
        slot[i] = replacement;

        let pragma = format!(
            "#pragma clang loop({}) interchange permutation({}) permuted_ids({})",
            targets.join(","),
            order.join(","),
            fresh.join(","),
        );
        Ok((nest, pragma))
    }

    fn apply_parallelize(&self, target: &str) -> Result<(LoopNest, String)> {
        let mut nest = self.clone();
        let node = Self::find_mut(&mut nest.roots, target)
            .ok_or_else(|| TreeError::UnknownLoop(target.to_string()))?;
        if !node.transformable {
            return Err(TreeError::NotTransformable(target.to_string()));
        }
        // The loop keeps its name and position; it is only fenced off from
        // further transformations.
        node.transformable = false;
        let pragma = format!("#pragma clang loop({target}) parallelize_thread");
        Ok((nest, pragma))
    }

    /// Maximal chains of consecutively nested transformable loops, in
    /// depth-first order. A chain head is a transformable loop whose parent
    /// cannot extend a chain into it (forest root, parent with several
    /// children, or non-transformable parent).
    fn chains(&self) -> Vec<Vec<String>> {
        fn walk(node: &LoopNode, continues_chain: bool, out: &mut Vec<Vec<String>>) {
            if node.transformable && !continues_chain {
                let mut chain = vec![node.name.clone()];
                let mut cur = node;
                while cur.children.len() == 1 && cur.children[0].transformable {
                    cur = &cur.children[0];
                    chain.push(cur.name.clone());
                }
                out.push(chain);
            }
            let extends = node.transformable && node.children.len() == 1;
            for child in &node.children {
                walk(child, extends && child.transformable, out);
            }
        }
        let mut out = Vec::new();
        for root in &self.roots {
            walk(root, false, &mut out);
        }
        out
    }
}

/// All permutations of `0..k` in lexicographic order.
fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(remaining: &mut Vec<usize>, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining.is_empty() {
            out.push(current.clone());
            return;
        }
        for i in 0..remaining.len() {
            let v = remaining.remove(i);
            current.push(v);
            rec(remaining, current, out);
            current.pop();
            remaining.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut (0..k).collect(), &mut Vec::new(), &mut out);
    out
}

/// The permutation of `0..k` at `rank` in lexicographic order, by factorial
/// decomposition. `rank` must be below `k!`.
fn unrank_permutation(k: usize, mut rank: u128) -> Vec<usize> {
    let mut factorials = vec![1u128; k.max(1)];
    for i in 1..k {
        factorials[i] = factorials[i - 1] * i as u128;
    }
    let mut items: Vec<usize> = (0..k).collect();
    let mut out = Vec::with_capacity(k);
    for remaining in (1..=k).rev() {
        let f = factorials[remaining - 1];
        out.push(items.remove((rank / f) as usize));
        rank %= f;
    }
    out
}

/// All length-`k` tuples over `choices`, last position varying fastest.
fn size_tuples(choices: &[u64], k: usize) -> Vec<Vec<u64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |&c| {
                    let mut next = prefix.clone();
                    next.push(c);
                    next
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BlockKind {
    Tile,
    Interchange,
    Parallelize,
}

/// One contiguous run of same-shaped children of a node: all tilings of one
/// chain prefix, all non-identity interchanges of one, or one
/// parallelization. Children are addressed by a flat index into the
/// concatenated blocks, so a node's children never need materializing.
#[derive(Debug, Clone)]
struct Block {
    kind: BlockKind,
    targets: Vec<String>,
    size: u128,
}

/// Index blocks for every legal next transformation of `nest`, plus their
/// exact total. Errors if the count exceeds what a `u128` can address.
fn child_blocks(nest: &LoopNest, tile_choices: &[u64]) -> Result<(Vec<Block>, u128)> {
    let chains = nest.chains();
    let mut blocks = Vec::new();
    let mut total: u128 = 0;
    let mut push = |kind, targets: &[String], size: u128| -> Result<()> {
        total = total.checked_add(size).ok_or(TreeError::ChildOverflow)?;
        if size > 0 {
            blocks.push(Block { kind, targets: targets.to_vec(), size });
        }
        Ok(())
    };

    let n_choices = tile_choices.len() as u128;
    for chain in &chains {
        let mut size: u128 = 1;
        for k in 1..=chain.len() {
            size = size.checked_mul(n_choices).ok_or(TreeError::ChildOverflow)?;
            push(BlockKind::Tile, &chain[..k], size)?;
        }
    }
    for chain in &chains {
        let mut factorial: u128 = 1;
        for k in 2..=chain.len() {
            factorial = factorial.checked_mul(k as u128).ok_or(TreeError::ChildOverflow)?;
            push(BlockKind::Interchange, &chain[..k], factorial - 1)?;
        }
    }
    for root in nest.roots() {
        if root.transformable {
            push(BlockKind::Parallelize, std::slice::from_ref(&root.name), 1)?;
        }
    }
    Ok((blocks, total))
}

/// The `index`-th child transformation of the node whose blocks these are.
fn unrank_child(blocks: &[Block], tile_choices: &[u64], mut index: u128) -> Transformation {
    for block in blocks {
        if index >= block.size {
            index -= block.size;
            continue;
        }
        return match block.kind {
            BlockKind::Tile => {
                let n = tile_choices.len() as u128;
                let k = block.targets.len();
                let mut sizes = vec![0u64; k];
                for slot in (0..k).rev() {
                    sizes[slot] = tile_choices[(index % n) as usize];
                    index /= n;
                }
                Transformation::Tile { targets: block.targets.clone(), sizes }
            }
            BlockKind::Interchange => {
                // Identity is lexicographic rank 0 and is not a child.
                let perm = unrank_permutation(block.targets.len(), index + 1);
                let order = perm.iter().map(|&p| block.targets[p].clone()).collect();
                Transformation::Interchange { targets: block.targets.clone(), order }
            }
            BlockKind::Parallelize => {
                Transformation::Parallelize { target: block.targets[0].clone() }
            }
        };
    }
    unreachable!("child index exceeds the node's child count")
}

/// Every legal single next transformation of `nest`, with its pragma:
/// tilings of every chain prefix with every size combination, non-identity
/// interchanges of every chain prefix of length ≥ 2, and parallelization of
/// each transformable outermost loop. Duplicate pragmas are dropped.
///
/// The list grows combinatorially with chain length (tiling a chain doubles
/// it); this eager form is meant for shallow nests and for checking the
/// indexed enumeration the search itself uses.
pub fn derive_children(
    nest: &LoopNest,
    tile_choices: &[u64],
) -> Vec<(Transformation, String)> {
    let chains = nest.chains();
    let mut out: Vec<(Transformation, String)> = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |nest: &LoopNest, t: Transformation| {
        let (_, pragma) = nest.apply(&t).expect("derived transformations are valid");
        if seen.insert(pragma.clone()) {
            out.push((t, pragma));
        }
    };

    for chain in &chains {
        for k in 1..=chain.len() {
            let targets = chain[..k].to_vec();
            for sizes in size_tuples(tile_choices, k) {
                push(nest, Transformation::Tile { targets: targets.clone(), sizes });
            }
        }
    }
    for chain in &chains {
        for k in 2..=chain.len() {
            let targets = chain[..k].to_vec();
            for perm in permutations(k) {
                if perm.iter().enumerate().all(|(i, &p)| i == p) {
                    continue;
                }
                let order = perm.iter().map(|&p| targets[p].clone()).collect();
                push(nest, Transformation::Interchange { targets: targets.clone(), order });
            }
        }
    }
    for root in nest.roots() {
        if root.transformable {
            push(nest, Transformation::Parallelize { target: root.name.clone() });
        }
    }
    out
}

/// Replace the annotation's marker line with the stack's pragma lines. The
/// first-applied transformation ends up directly above the loop; an empty
/// stack removes the marker line entirely.
pub fn instantiate_stack(source: &str, marker: &str, pragmas: &[String]) -> Result<String> {
    let count = source.matches(marker).count();
    if count == 0 {
        return Err(TreeError::MarkerMissing(marker.to_string()));
    }
    if count > 1 {
        return Err(TreeError::MarkerAmbiguous(marker.to_string()));
    }
    let at = source.find(marker).unwrap();
    let line_start = source[..at].rfind('\n').map_or(0, |i| i + 1);
    let line_end = source[at..].find('\n').map_or(source.len(), |i| at + i + 1);
    let mut replacement = String::new();
    for pragma in pragmas.iter().rev() {
        replacement.push_str(pragma);
        replacement.push('\n');
    }
    Ok(format!("{}{}{}", &source[..line_start], replacement, &source[line_end..]))
}

/// What the driver learned from running one pragma stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StackOutcome {
    /// Compiled and ran; the stack's metric. Counts as a valid evaluation.
    Metric(f64),
    /// The compiler refused the transformation sequence; the node is
    /// rejected and its subtree pruned.
    CompileRejected,
    /// Compiled but failed to run or to produce a metric; counted but not
    /// valid, and not expanded.
    RunFailed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeStatus {
    Unexplored,
    Evaluated(f64),
    Rejected,
    Failed,
}

impl NodeStatus {
    pub fn metric(self) -> Option<f64> {
        match self {
            NodeStatus::Evaluated(m) => Some(m),
            _ => None,
        }
    }
}

/// One node of the search tree: the transformation added at this node and
/// how its stack fared. The full stack is the path from the root. Children
/// exist as indices into the node's count until they are drawn; only drawn
/// children become nodes.
#[derive(Debug)]
pub struct StackNode {
    pub parent: Option<usize>,
    pub transformation: Option<Transformation>,
    pub pragma: Option<String>,
    pub status: NodeStatus,
    pub depth: usize,
    nest: LoopNest,
    blocks: Vec<Block>,
    child_total: u128,
    realized: BTreeMap<u128, usize>,
}

impl StackNode {
    /// Node ids of the children drawn so far, in child-index order.
    pub fn children(&self) -> Vec<usize> {
        self.realized.values().copied().collect()
    }

    fn unexplored(&self) -> u128 {
        self.child_total - self.realized.len() as u128
    }
}

#[derive(Debug, Clone)]
pub struct TreeSearchSettings {
    /// Number of valid (compiled-and-ran) evaluations to collect.
    pub budget: usize,
    pub tile_choices: Vec<u64>,
    /// Maximum transformations stacked on the untransformed source.
    pub max_stack_depth: usize,
    /// Probability of expanding a child of the best stack found so far
    /// instead of a uniformly random unexplored node.
    pub exploit_probability: f64,
    pub seed: u64,
}

impl Default for TreeSearchSettings {
    fn default() -> Self {
        TreeSearchSettings {
            budget: 100,
            tile_choices: DEFAULT_TILE_CHOICES.to_vec(),
            max_stack_depth: MAX_STACK_DEPTH,
            exploit_probability: EXPLOIT_PROBABILITY,
            seed: 0,
        }
    }
}

impl TreeSearchSettings {
    pub fn check(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(TreeError::BadSettings("budget must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.exploit_probability) {
            return Err(TreeError::BadSettings(
                "exploit probability must be within [0, 1]".into(),
            ));
        }
        if self.tile_choices.iter().any(|&c| c < 2) {
            return Err(TreeError::BadSettings("tile sizes must be at least 2".into()));
        }
        let mut seen = HashSet::new();
        for &choice in &self.tile_choices {
            if !seen.insert(choice) {
                return Err(TreeError::BadSettings(format!(
                    "tile size {choice} is listed twice"
                )));
            }
        }
        Ok(())
    }
}

/// Search-tree state after [`tree_search`] finishes.
#[derive(Debug)]
pub struct TreeSearch {
    nodes: Vec<StackNode>,
    /// Every evaluator invocation, including rejected and failed ones.
    pub total_experiments: usize,
    /// Invocations that compiled and produced a metric.
    pub valid_experiments: usize,
    /// Invocations the compiler rejected.
    pub rejected_experiments: usize,
    /// Node index of the best evaluated stack.
    pub best: Option<usize>,
}

impl TreeSearch {
    pub fn nodes(&self) -> &[StackNode] {
        &self.nodes
    }

    /// Pragmas of a node's stack in order of application (root first).
    pub fn stack_of(&self, id: usize) -> Vec<String> {
        let mut pragmas = Vec::new();
        let mut cursor = Some(id);
        while let Some(i) = cursor {
            if let Some(p) = &self.nodes[i].pragma {
                pragmas.push(p.clone());
            }
            cursor = self.nodes[i].parent;
        }
        pragmas.reverse();
        pragmas
    }

    pub fn best_stack(&self) -> Option<(Vec<String>, f64)> {
        self.best.map(|i| {
            let metric = self.nodes[i].status.metric().expect("best is evaluated");
            (self.stack_of(i), metric)
        })
    }
}

/// Uniformly random unexplored child index of one node, by rejection
/// against the (small) set of already-drawn indices.
fn random_unexplored_index(node: &StackNode, rng: &mut ChaCha8Rng) -> u128 {
    debug_assert!(node.unexplored() > 0);
    loop {
        let index = rng.random_range(0..node.child_total);
        if !node.realized.contains_key(&index) {
            return index;
        }
    }
}

/// Explore stacks of loop transformations, spending `budget` valid
/// evaluations (the total including rejections is typically larger). Each
/// step either draws an unexplored child of the current best stack (with the
/// configured probability) or a uniformly random unexplored node from the
/// whole tree. A successfully evaluated node below the depth cap becomes
/// expandable; rejected and failed nodes are dead ends. Stops early when no
/// unexplored node remains.
pub fn tree_search<F>(
    annotation: &LoopAnnotation,
    settings: &TreeSearchSettings,
    mut evaluate: F,
) -> Result<TreeSearch>
where
    F: FnMut(&[String]) -> StackOutcome,
{
    settings.check()?;
    annotation.check()?;
    let root_nest = LoopNest::from_annotation(annotation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    let mut search = TreeSearch {
        nodes: vec![StackNode {
            parent: None,
            transformation: None,
            pragma: None,
            status: NodeStatus::Unexplored,
            depth: 0,
            nest: root_nest,
            blocks: Vec::new(),
            child_total: 0,
            realized: BTreeMap::new(),
        }],
        total_experiments: 0,
        valid_experiments: 0,
        rejected_experiments: 0,
        best: None,
    };
    // Expanded nodes that may still have unexplored children, and the exact
    // count of unexplored children across all of them.
    let mut open: Vec<usize> = Vec::new();
    let mut unexplored_total: u128 = 0;

    let expand = |search: &mut TreeSearch,
                      open: &mut Vec<usize>,
                      unexplored_total: &mut u128,
                      id: usize|
     -> Result<()> {
        if search.nodes[id].depth >= settings.max_stack_depth {
            return Ok(());
        }
        // A nest can outgrow the child index (chains past ~34 loops overflow
        // the factorial counts). Such a node is a leaf: the search must keep
        // running on the rest of the tree, not die on an unenumerable corner.
        let (blocks, total) = match child_blocks(&search.nodes[id].nest, &settings.tile_choices) {
            Ok(enumerated) => enumerated,
            Err(TreeError::ChildOverflow) => return Ok(()),
            Err(other) => return Err(other),
        };
        search.nodes[id].blocks = blocks;
        search.nodes[id].child_total = total;
        if total > 0 {
            open.push(id);
            *unexplored_total += total;
        }
        Ok(())
    };

    // The untransformed source is the baseline; if it cannot even run,
    // the setup is broken and searching is pointless.
    search.total_experiments += 1;
    match evaluate(&[]) {
        StackOutcome::Metric(metric) => {
            search.nodes[0].status = NodeStatus::Evaluated(metric);
            search.valid_experiments += 1;
            search.best = Some(0);
        }
        StackOutcome::CompileRejected | StackOutcome::RunFailed => {
            return Err(TreeError::RootRejected);
        }
    }
    expand(&mut search, &mut open, &mut unexplored_total, 0)?;

    while search.valid_experiments < settings.budget && unexplored_total > 0 {
        // Choose a parent and the index of one of its unexplored children.
        let exploit = rng.random::<f64>() < settings.exploit_probability;
        let mut choice = None;
        if exploit {
            if let Some(best) = search.best {
                if search.nodes[best].unexplored() > 0 {
                    choice =
                        Some((best, random_unexplored_index(&search.nodes[best], &mut rng)));
                }
            }
        }
        let (parent_id, child_index) = choice.unwrap_or_else(|| {
            open.retain(|&id| search.nodes[id].unexplored() > 0);
            let mut r = rng.random_range(0..unexplored_total);
            for &id in open.iter() {
                let here = search.nodes[id].unexplored();
                if r < here {
                    return (id, random_unexplored_index(&search.nodes[id], &mut rng));
                }
                r -= here;
            }
            unreachable!("unexplored child counts track the open list")
        });

        // Materialize that child.
        let transformation =
            unrank_child(&search.nodes[parent_id].blocks, &settings.tile_choices, child_index);
        let (nest, pragma) = search.nodes[parent_id]
            .nest
            .apply(&transformation)
            .expect("indexed transformations are valid");
        let id = search.nodes.len();
        let depth = search.nodes[parent_id].depth + 1;
        search.nodes.push(StackNode {
            parent: Some(parent_id),
            transformation: Some(transformation),
            pragma: Some(pragma),
            status: NodeStatus::Unexplored,
            depth,
            nest,
            blocks: Vec::new(),
            child_total: 0,
            realized: BTreeMap::new(),
        });
        search.nodes[parent_id].realized.insert(child_index, id);
        unexplored_total -= 1;

        let stack = search.stack_of(id);
        search.total_experiments += 1;
        match evaluate(&stack) {
            StackOutcome::Metric(metric) => {
                search.nodes[id].status = NodeStatus::Evaluated(metric);
                search.valid_experiments += 1;
                let beats = search
                    .best
                    .is_none_or(|b| metric < search.nodes[b].status.metric().unwrap());
                if beats {
                    search.best = Some(id);
                }
                expand(&mut search, &mut open, &mut unexplored_total, id)?;
            }
            StackOutcome::CompileRejected => {
                search.nodes[id].status = NodeStatus::Rejected;
                search.rejected_experiments += 1;
            }
            StackOutcome::RunFailed => {
                search.nodes[id].status = NodeStatus::Failed;
            }
        }
    }
    Ok(search)
}
