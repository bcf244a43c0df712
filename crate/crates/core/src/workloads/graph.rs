//! Undirected graph in adjacency lists, stored as two directed records per
//! edge.
//!
//! Vertex table at `base + 64`: per vertex (16B) `[head, degree]`; edge
//! record (16B) `[dst, next]`. Header `[edges]` at `base`.

use super::{Arena, Mem, Op, Peek, Structure};
use crate::error::{SimError, SimResult};

pub const VERTICES: u64 = 1 << 18;
const VERTEX: u64 = 16;
const EDGE: u64 = 16;

#[derive(Clone, Debug)]
pub struct Graph {
    edges: u64,
    table: u64,
    n: u64,
    arena: Arena,
}

impl Graph {
    pub fn new(base: u64, n: u64, mut arena: Arena) -> Self {
        let table = arena.alloc(n * VERTEX);
        Graph { edges: base, table, n, arena }
    }

    fn vertex(&self, u: u64) -> u64 {
        self.table + u * VERTEX
    }

    fn link(&mut self, m: &mut dyn Mem, u: u64, v: u64) -> SimResult<()> {
        let vx = self.vertex(u);
        let head = m.load(vx)?;
        let e = self.arena.alloc(EDGE);
        m.store(e, v)?;
        m.store(e + 8, head)?;
        m.store(vx, e)?;
        let d = m.load(vx + 8)?;
        m.store(vx + 8, d + 1)
    }

    fn unlink(&mut self, m: &mut dyn Mem, u: u64, v: u64) -> SimResult<()> {
        let vx = self.vertex(u);
        let mut link = vx;
        let mut e = m.load(link)?;
        while e != 0 {
            m.compute(1)?;
            if m.load(e)? == v {
                let next = m.load(e + 8)?;
                m.store(link, next)?;
                let d = m.load(vx + 8)?;
                m.store(vx + 8, d - 1)?;
                self.arena.free(e, EDGE);
                return Ok(());
            }
            link = e + 8;
            e = m.load(link)?;
        }
        Err(SimError::SimFault(format!("edge ({u},{v}) missing")))
    }

    fn bump(&self, m: &mut dyn Mem, delta: i64) -> SimResult<()> {
        let c = m.load(self.edges)?;
        m.store(self.edges, c.wrapping_add_signed(delta))
    }
}

impl Structure for Graph {
    fn apply(&mut self, m: &mut dyn Mem, op: &Op) -> SimResult<()> {
        match *op {
            Op::InsertEdge { u, v } => {
                self.link(m, u, v)?;
                self.link(m, v, u)?;
                self.bump(m, 1)
            }
            Op::DeleteEdge { u, v } => {
                self.unlink(m, u, v)?;
                self.unlink(m, v, u)?;
                self.bump(m, -1)
            }
            other => Err(SimError::Invalid(format!("sdg_graph cannot apply {other:?}"))),
        }
    }

    fn contents(&self, peek: &Peek) -> Result<Vec<(u64, u64)>, String> {
        let mut directed = Vec::new();
        for u in 0..self.n {
            let mut deg = 0;
            let mut e = peek(self.vertex(u));
            while e != 0 {
                directed.push((u, peek(e)));
                deg += 1;
                e = peek(e + 8);
            }
            if deg != peek(self.vertex(u) + 8) {
                return Err(format!("vertex {u}: degree field disagrees with its list"));
            }
        }
        let mut fwd: Vec<(u64, u64)> = directed.iter().filter(|e| e.0 < e.1).copied().collect();
        let mut back: Vec<(u64, u64)> = directed.iter().filter(|e| e.0 > e.1).map(|e| (e.1, e.0)).collect();
        fwd.sort_unstable();
        back.sort_unstable();
        if fwd != back {
            return Err("edge records are not symmetric".into());
        }
        if fwd.len() as u64 != peek(self.edges) {
            return Err("edge count disagrees".into());
        }
        Ok(fwd)
    }

    fn box_clone(&self) -> Box<dyn Structure> {
        Box::new(self.clone())
    }
}
