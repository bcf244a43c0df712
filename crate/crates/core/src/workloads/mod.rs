//! Micro-benchmark drivers. Each benchmark is a data structure laid out in
//! simulated memory plus an operation stream generated from `(spec, seed)`
//! by a host reference model, so every design replays the same operations.

mod array_swap;
mod bptree;
mod design;
mod graph;
mod hash_table;
mod heap;
mod linked_list;
mod mem;
mod rbtree;
mod run;

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};
use crate::rng::SimRng;

pub use design::{Design, Executor, OpOutcome};
pub use mem::{Arena, Mem, Peek};
pub use run::{run_sweep, run_workload, run_workload_image, synthetic_huge_tx, SweepAxis, Touch};

/// Start of the simulated heap used by every benchmark.
pub const HEAP_BASE: u64 = 0x1000_0000;
pub const HEAP_BYTES: u64 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    ArraySwap,
    BinaryHeap,
    Bptree,
    HashTable,
    LinkedList,
    RbTree,
    SdgGraph,
    KvMixed,
    /// One or more transactions that each update `huge_tx_lines` distinct lines.
    HugeTx,
}

impl WorkloadKind {
    /// The eight named micro-benchmarks.
    pub const BENCHMARKS: [WorkloadKind; 8] = [
        WorkloadKind::ArraySwap,
        WorkloadKind::BinaryHeap,
        WorkloadKind::Bptree,
        WorkloadKind::HashTable,
        WorkloadKind::LinkedList,
        WorkloadKind::RbTree,
        WorkloadKind::SdgGraph,
        WorkloadKind::KvMixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::ArraySwap => "array_swap",
            WorkloadKind::BinaryHeap => "binary_heap",
            WorkloadKind::Bptree => "bptree",
            WorkloadKind::HashTable => "hash_table",
            WorkloadKind::LinkedList => "linked_list",
            WorkloadKind::RbTree => "rb_tree",
            WorkloadKind::SdgGraph => "sdg_graph",
            WorkloadKind::KvMixed => "kv_mixed",
            WorkloadKind::HugeTx => "huge_tx",
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WorkloadKind::BENCHMARKS
            .into_iter()
            .chain([WorkloadKind::HugeTx])
            .find(|k| k.name() == s)
            .ok_or_else(|| SimError::Invalid(format!("unknown workload `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    /// Measured operations; each is one transaction.
    pub ops: u64,
    /// Elements in the initial image, built before the measured phase.
    pub initial: u64,
    /// Keys are drawn from `1..=key_space`.
    pub key_space: u64,
    /// Simulated threads, one per core, serialized by a workload lock.
    pub threads: usize,
    pub seed: u64,
    pub huge_tx_lines: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, ops: u64, seed: u64) -> Self {
        let initial = match kind {
            WorkloadKind::ArraySwap => array_swap::ELEMENTS,
            WorkloadKind::LinkedList => 1024,
            WorkloadKind::HugeTx => 0,
            _ => 1 << 20,
        };
        WorkloadSpec { kind, ops, initial, key_space: 1 << 30, threads: 1, seed, huge_tx_lines: 0 }
    }

    pub fn validate(&self) -> SimResult<()> {
        if self.threads == 0 {
            return Err(SimError::Invalid("threads must be >= 1".into()));
        }
        if self.key_space < 2 {
            return Err(SimError::Invalid("key_space must be >= 2".into()));
        }
        if self.kind == WorkloadKind::HugeTx && self.huge_tx_lines == 0 {
            return Err(SimError::Invalid("huge_tx needs at least one line".into()));
        }
        if self.kind == WorkloadKind::ArraySwap && self.initial < 2 {
            return Err(SimError::Invalid("array_swap needs at least two elements".into()));
        }
        Ok(())
    }
}

/// One logical operation, executed as one transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Insert { key: u64, value: u64 },
    Delete { key: u64 },
    Get { key: u64 },
    DeleteMin,
    PushHead { key: u64, value: u64 },
    PopTail,
    Swap { i: u64, j: u64 },
    /// Fills array element `i` during setup.
    Fill { i: u64 },
    InsertEdge { u: u64, v: u64 },
    DeleteEdge { u: u64, v: u64 },
    /// Writes `lines` consecutive lines starting at line `first`.
    TouchLines { first: u64, lines: u64, value: u64 },
}

/// The pre-generated operations of a run and the structure's expected
/// final contents in canonical form.
#[derive(Clone, Debug)]
pub struct Stream {
    pub setup: Vec<Op>,
    pub ops: Vec<Op>,
    pub expected: Vec<(u64, u64)>,
}

/// A benchmark data structure living in simulated memory.
pub trait Structure {
    fn apply(&mut self, m: &mut dyn Mem, op: &Op) -> SimResult<()>;
    /// Walks the structure, checks its invariants and returns the logical
    /// contents in the same canonical form as [`Stream::expected`].
    fn contents(&self, peek: &Peek) -> Result<Vec<(u64, u64)>, String>;
    fn box_clone(&self) -> Box<dyn Structure>;
}

impl Clone for Box<dyn Structure> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

pub fn new_structure(spec: &WorkloadSpec) -> Box<dyn Structure> {
    let arena = Arena::new(HEAP_BASE + 4096, HEAP_BYTES);
    match spec.kind {
        WorkloadKind::ArraySwap => Box::new(array_swap::ArraySwap::new(HEAP_BASE, spec.initial)),
        WorkloadKind::BinaryHeap => Box::new(heap::Heap::new(HEAP_BASE, spec.initial + spec.ops + 1)),
        WorkloadKind::Bptree => Box::new(bptree::BpTree::new(HEAP_BASE, arena)),
        WorkloadKind::HashTable | WorkloadKind::KvMixed => {
            let buckets = (spec.initial + spec.ops).max(64).next_power_of_two();
            Box::new(hash_table::HashTable::new(HEAP_BASE, buckets, arena))
        }
        WorkloadKind::LinkedList => Box::new(linked_list::LinkedList::new(HEAP_BASE, arena)),
        WorkloadKind::RbTree => Box::new(rbtree::RbTree::new(HEAP_BASE, arena)),
        WorkloadKind::SdgGraph => Box::new(graph::Graph::new(HEAP_BASE, graph::VERTICES, arena)),
        WorkloadKind::HugeTx => Box::new(run::Touch::new(HEAP_BASE)),
    }
}

/// Keys with O(1) random pick and removal.
#[derive(Default)]
struct KeyBag {
    keys: Vec<u64>,
    pos: rustc_hash::FxHashMap<u64, usize>,
}

impl KeyBag {
    fn insert(&mut self, k: u64) -> bool {
        if self.pos.contains_key(&k) {
            return false;
        }
        self.pos.insert(k, self.keys.len());
        self.keys.push(k);
        true
    }

    fn remove(&mut self, k: u64) {
        if let Some(i) = self.pos.remove(&k) {
            let last = self.keys.pop().expect("non-empty");
            if i < self.keys.len() {
                self.keys[i] = last;
                self.pos.insert(last, i);
            }
        }
    }

    fn pick(&self, rng: &mut SimRng) -> Option<u64> {
        (!self.keys.is_empty()).then(|| self.keys[rng.below(self.keys.len() as u64) as usize])
    }

    fn len(&self) -> usize {
        self.keys.len()
    }
}

/// Generates the operation stream of `spec` with a host reference model.
pub fn generate(spec: &WorkloadSpec) -> SimResult<Stream> {
    spec.validate()?;
    let mut rng = SimRng::stream(spec.seed, spec.kind as u64 + 1);
    let ks = spec.key_space;
    let mut setup = Vec::new();
    let mut ops = Vec::with_capacity(spec.ops as usize);
    let expected = match spec.kind {
        WorkloadKind::Bptree | WorkloadKind::RbTree | WorkloadKind::HashTable | WorkloadKind::KvMixed => {
            let mut map = BTreeMap::new();
            let mut bag = KeyBag::default();
            let insert = |rng: &mut SimRng, map: &mut BTreeMap<u64, u64>, bag: &mut KeyBag| {
                let key = rng.range(1, ks + 1);
                let value = rng.next_u64() | 1;
                map.insert(key, value);
                bag.insert(key);
                Op::Insert { key, value }
            };
            while (bag.len() as u64) < spec.initial.min(ks) {
                setup.push(insert(&mut rng, &mut map, &mut bag));
            }
            for _ in 0..spec.ops {
                let op = if spec.kind == WorkloadKind::KvMixed {
                    if rng.chance(0.8) || bag.len() == 0 {
                        insert(&mut rng, &mut map, &mut bag)
                    } else {
                        Op::Get { key: bag.pick(&mut rng).expect("non-empty") }
                    }
                } else if bag.len() == 0 || rng.chance(0.5) {
                    insert(&mut rng, &mut map, &mut bag)
                } else {
                    let key = bag.pick(&mut rng).expect("non-empty");
                    bag.remove(key);
                    map.remove(&key);
                    Op::Delete { key }
                };
                ops.push(op);
            }
            map.into_iter().collect()
        }
        WorkloadKind::LinkedList => {
            let mut list = VecDeque::new();
            let push = |rng: &mut SimRng, list: &mut VecDeque<(u64, u64)>| {
                let key = rng.range(1, ks + 1);
                let value = rng.next_u64() | 1;
                list.push_front((key, value));
                Op::PushHead { key, value }
            };
            for _ in 0..spec.initial {
                setup.push(push(&mut rng, &mut list));
            }
            for _ in 0..spec.ops {
                if list.is_empty() || rng.chance(0.5) {
                    ops.push(push(&mut rng, &mut list));
                } else {
                    list.pop_back();
                    ops.push(Op::PopTail);
                }
            }
            list.into_iter().collect()
        }
        WorkloadKind::BinaryHeap => {
            let mut h = BinaryHeap::new();
            let push = |rng: &mut SimRng, h: &mut BinaryHeap<std::cmp::Reverse<(u64, u64)>>| {
                let key = rng.range(1, ks + 1);
                let value = rng.next_u64() | 1;
                h.push(std::cmp::Reverse((key, value)));
                Op::Insert { key, value }
            };
            for _ in 0..spec.initial {
                setup.push(push(&mut rng, &mut h));
            }
            for _ in 0..spec.ops {
                if h.is_empty() || rng.chance(0.5) {
                    ops.push(push(&mut rng, &mut h));
                } else {
                    h.pop();
                    ops.push(Op::DeleteMin);
                }
            }
            // Keys only: ties between equal keys may legally resolve either way.
            let mut keys: Vec<(u64, u64)> = h.into_iter().map(|r| (r.0 .0, 0)).collect();
            keys.sort_unstable();
            keys
        }
        WorkloadKind::ArraySwap => {
            let n = spec.initial;
            let mut perm: Vec<u64> = (0..n).collect();
            setup.extend((0..n).map(|i| Op::Fill { i }));
            for _ in 0..spec.ops {
                let i = rng.below(n);
                let mut j = rng.below(n - 1);
                if j >= i {
                    j += 1;
                }
                perm.swap(i as usize, j as usize);
                ops.push(Op::Swap { i, j });
            }
            perm.into_iter().enumerate().map(|(i, id)| (i as u64, id)).collect()
        }
        WorkloadKind::SdgGraph => {
            let v = graph::VERTICES;
            let mut edges: BTreeSet<(u64, u64)> = BTreeSet::new();
            let mut bag = KeyBag::default();
            let insert = |rng: &mut SimRng, edges: &mut BTreeSet<(u64, u64)>, bag: &mut KeyBag| loop {
                let a = rng.below(v);
                let b = rng.below(v);
                if a == b {
                    continue;
                }
                let (u, w) = (a.min(b), a.max(b));
                if edges.insert((u, w)) {
                    bag.insert(u * v + w);
                    return Op::InsertEdge { u, v: w };
                }
            };
            for _ in 0..spec.initial {
                setup.push(insert(&mut rng, &mut edges, &mut bag));
            }
            for _ in 0..spec.ops {
                if bag.len() == 0 || rng.chance(0.5) {
                    ops.push(insert(&mut rng, &mut edges, &mut bag));
                } else {
                    let e = bag.pick(&mut rng).expect("non-empty");
                    bag.remove(e);
                    let (u, w) = (e / v, e % v);
                    edges.remove(&(u, w));
                    ops.push(Op::DeleteEdge { u, v: w });
                }
            }
            edges.into_iter().collect()
        }
        WorkloadKind::HugeTx => {
            let n = spec.huge_tx_lines;
            for k in 0..spec.ops {
                ops.push(Op::TouchLines { first: 0, lines: n, value: k + 1 });
            }
            if spec.ops == 0 {
                Vec::new()
            } else {
                (0..n).map(|l| (l, spec.ops)).collect()
            }
        }
    };
    Ok(Stream { setup, ops, expected })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in WorkloadKind::BENCHMARKS {
            assert_eq!(k.name().parse::<WorkloadKind>().unwrap(), k);
        }
        assert!("nope".parse::<WorkloadKind>().is_err());
    }

    #[test]
    fn streams_are_deterministic() {
        for k in WorkloadKind::BENCHMARKS {
            let s = WorkloadSpec::new(k, 200, 9);
            let a = generate(&s).unwrap();
            let b = generate(&s).unwrap();
            assert_eq!(a.ops, b.ops);
            assert_eq!(a.expected, b.expected);
        }
    }
}
