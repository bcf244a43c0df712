//! Red-black tree (textbook insert/delete with a sentinel nil node).
//!
//! Node (64B, one line) `[key, value, left, right, parent, color]`.
//! Header `[root, count]` at `base`; the nil sentinel sits at `base + 64`.

use super::{Arena, Mem, Op, Peek, Structure};
use crate::error::{SimError, SimResult};

const NODE: u64 = 64;
const KEY: u64 = 0;
const VALUE: u64 = 8;
const LEFT: u64 = 16;
const RIGHT: u64 = 24;
const PARENT: u64 = 32;
const COLOR: u64 = 40;
const BLACK: u64 = 0;
const RED: u64 = 1;

#[derive(Clone, Debug)]
pub struct RbTree {
    root: u64,
    count: u64,
    nil: u64,
    arena: Arena,
}

struct Ctx<'a> {
    m: &'a mut dyn Mem,
}

impl Ctx<'_> {
    fn get(&mut self, n: u64, f: u64) -> SimResult<u64> {
        self.m.load(n + f)
    }

    fn set(&mut self, n: u64, f: u64, v: u64) -> SimResult<()> {
        self.m.store(n + f, v)
    }
}

impl RbTree {
    pub fn new(base: u64, arena: Arena) -> Self {
        RbTree { root: base, count: base + 8, nil: base + 64, arena }
    }

    /// Lazily initializes the root pointer to the sentinel.
    fn root_of(&self, c: &mut Ctx) -> SimResult<u64> {
        let r = c.m.load(self.root)?;
        if r == 0 {
            c.m.store(self.root, self.nil)?;
            c.set(self.nil, COLOR, BLACK)?;
            return Ok(self.nil);
        }
        Ok(r)
    }

    fn rotate(&self, c: &mut Ctx, x: u64, left: bool) -> SimResult<()> {
        let (a, b) = if left { (RIGHT, LEFT) } else { (LEFT, RIGHT) };
        let y = c.get(x, a)?;
        let yb = c.get(y, b)?;
        c.set(x, a, yb)?;
        if yb != self.nil {
            c.set(yb, PARENT, x)?;
        }
        let xp = c.get(x, PARENT)?;
        c.set(y, PARENT, xp)?;
        if xp == self.nil {
            c.m.store(self.root, y)?;
        } else if c.get(xp, LEFT)? == x {
            c.set(xp, LEFT, y)?;
        } else {
            c.set(xp, RIGHT, y)?;
        }
        c.set(y, b, x)?;
        c.set(x, PARENT, y)
    }

    fn insert(&mut self, m: &mut dyn Mem, key: u64, value: u64) -> SimResult<()> {
        let c = &mut Ctx { m };
        let nil = self.nil;
        let mut y = nil;
        let mut x = self.root_of(c)?;
        while x != nil {
            c.m.compute(1)?;
            y = x;
            let k = c.get(x, KEY)?;
            if key == k {
                return c.set(x, VALUE, value);
            }
            x = if key < k { c.get(x, LEFT)? } else { c.get(x, RIGHT)? };
        }
        let z = self.arena.alloc(NODE);
        c.set(z, KEY, key)?;
        c.set(z, VALUE, value)?;
        c.set(z, LEFT, nil)?;
        c.set(z, RIGHT, nil)?;
        c.set(z, PARENT, y)?;
        c.set(z, COLOR, RED)?;
        if y == nil {
            c.m.store(self.root, z)?;
        } else if key < c.get(y, KEY)? {
            c.set(y, LEFT, z)?;
        } else {
            c.set(y, RIGHT, z)?;
        }
        self.insert_fixup(c, z)?;
        let n = c.m.load(self.count)?;
        c.m.store(self.count, n + 1)
    }

    fn insert_fixup(&self, c: &mut Ctx, mut z: u64) -> SimResult<()> {
        loop {
            let p = c.get(z, PARENT)?;
            if c.get(p, COLOR)? != RED {
                break;
            }
            let g = c.get(p, PARENT)?;
            let p_is_left = c.get(g, LEFT)? == p;
            let (side, other) = if p_is_left { (LEFT, RIGHT) } else { (RIGHT, LEFT) };
            let u = c.get(g, other)?;
            if c.get(u, COLOR)? == RED {
                c.set(p, COLOR, BLACK)?;
                c.set(u, COLOR, BLACK)?;
                c.set(g, COLOR, RED)?;
                z = g;
                continue;
            }
            if c.get(p, other)? == z {
                z = p;
                self.rotate(c, z, side == LEFT)?;
            }
            let p = c.get(z, PARENT)?;
            let g = c.get(p, PARENT)?;
            c.set(p, COLOR, BLACK)?;
            c.set(g, COLOR, RED)?;
            self.rotate(c, g, side != LEFT)?;
        }
        let r = c.m.load(self.root)?;
        if c.get(r, COLOR)? != BLACK {
            c.set(r, COLOR, BLACK)?;
        }
        Ok(())
    }

    fn transplant(&self, c: &mut Ctx, u: u64, v: u64) -> SimResult<()> {
        let up = c.get(u, PARENT)?;
        if up == self.nil {
            c.m.store(self.root, v)?;
        } else if c.get(up, LEFT)? == u {
            c.set(up, LEFT, v)?;
        } else {
            c.set(up, RIGHT, v)?;
        }
        c.set(v, PARENT, up)
    }

    fn delete(&mut self, m: &mut dyn Mem, key: u64) -> SimResult<()> {
        let c = &mut Ctx { m };
        let nil = self.nil;
        let mut z = self.root_of(c)?;
        while z != nil {
            c.m.compute(1)?;
            let k = c.get(z, KEY)?;
            if k == key {
                break;
            }
            z = if key < k { c.get(z, LEFT)? } else { c.get(z, RIGHT)? };
        }
        if z == nil {
            return Err(SimError::SimFault(format!("delete of missing key {key}")));
        }
        let mut y_color = c.get(z, COLOR)?;
        let x;
        let zl = c.get(z, LEFT)?;
        let zr = c.get(z, RIGHT)?;
        if zl == nil {
            x = zr;
            self.transplant(c, z, zr)?;
        } else if zr == nil {
            x = zl;
            self.transplant(c, z, zl)?;
        } else {
            let mut y = zr;
            loop {
                let l = c.get(y, LEFT)?;
                if l == nil {
                    break;
                }
                y = l;
            }
            y_color = c.get(y, COLOR)?;
            x = c.get(y, RIGHT)?;
            if c.get(y, PARENT)? == z {
                c.set(x, PARENT, y)?;
            } else {
                self.transplant(c, y, x)?;
                c.set(y, RIGHT, zr)?;
                c.set(zr, PARENT, y)?;
            }
            self.transplant(c, z, y)?;
            c.set(y, LEFT, zl)?;
            c.set(zl, PARENT, y)?;
            let zc = c.get(z, COLOR)?;
            c.set(y, COLOR, zc)?;
        }
        if y_color == BLACK {
            self.delete_fixup(c, x)?;
        }
        self.arena.free(z, NODE);
        let n = c.m.load(self.count)?;
        c.m.store(self.count, n - 1)
    }

    fn delete_fixup(&self, c: &mut Ctx, mut x: u64) -> SimResult<()> {
        loop {
            if x == c.m.load(self.root)? || c.get(x, COLOR)? != BLACK {
                break;
            }
            let p = c.get(x, PARENT)?;
            let x_is_left = c.get(p, LEFT)? == x;
            let (side, other) = if x_is_left { (LEFT, RIGHT) } else { (RIGHT, LEFT) };
            let mut w = c.get(p, other)?;
            if c.get(w, COLOR)? == RED {
                c.set(w, COLOR, BLACK)?;
                c.set(p, COLOR, RED)?;
                self.rotate(c, p, side == LEFT)?;
                w = c.get(p, other)?;
            }
            let ws = c.get(w, side)?;
            let wo = c.get(w, other)?;
            if c.get(ws, COLOR)? == BLACK && c.get(wo, COLOR)? == BLACK {
                c.set(w, COLOR, RED)?;
                x = p;
                continue;
            }
            if c.get(wo, COLOR)? == BLACK {
                c.set(ws, COLOR, BLACK)?;
                c.set(w, COLOR, RED)?;
                self.rotate(c, w, side != LEFT)?;
                w = c.get(p, other)?;
            }
            let pc = c.get(p, COLOR)?;
            c.set(w, COLOR, pc)?;
            c.set(p, COLOR, BLACK)?;
            let wo = c.get(w, other)?;
            c.set(wo, COLOR, BLACK)?;
            self.rotate(c, p, side == LEFT)?;
            x = c.m.load(self.root)?;
        }
        if c.get(x, COLOR)? != BLACK {
            c.set(x, COLOR, BLACK)?;
        }
        Ok(())
    }

    /// Returns the black height of the subtree at `n`.
    fn walk(&self, peek: &Peek, n: u64, lo: Option<u64>, hi: Option<u64>, out: &mut Vec<(u64, u64)>) -> Result<u64, String> {
        if n == self.nil {
            return Ok(1);
        }
        if out.len() > (1 << 26) {
            return Err("cycle in tree".into());
        }
        let k = peek(n + KEY);
        if lo.is_some_and(|l| k <= l) || hi.is_some_and(|h| k >= h) {
            return Err(format!("node {n:#x} out of order"));
        }
        let (l, r) = (peek(n + LEFT), peek(n + RIGHT));
        let red = peek(n + COLOR) == RED;
        for ch in [l, r] {
            if ch != self.nil && peek(ch + PARENT) != n {
                return Err(format!("node {ch:#x}: parent link broken"));
            }
            if red && ch != self.nil && peek(ch + COLOR) == RED {
                return Err(format!("red node {n:#x} has a red child"));
            }
        }
        let bl = self.walk(peek, l, lo, Some(k), out)?;
        out.push((k, peek(n + VALUE)));
        let br = self.walk(peek, r, Some(k), hi, out)?;
        if bl != br {
            return Err(format!("node {n:#x}: black heights differ"));
        }
        Ok(bl + u64::from(!red))
    }
}

impl Structure for RbTree {
    fn apply(&mut self, m: &mut dyn Mem, op: &Op) -> SimResult<()> {
        match *op {
            Op::Insert { key, value } => self.insert(m, key, value),
            Op::Delete { key } => self.delete(m, key),
            other => Err(SimError::Invalid(format!("rb_tree cannot apply {other:?}"))),
        }
    }

    fn contents(&self, peek: &Peek) -> Result<Vec<(u64, u64)>, String> {
        let root = peek(self.root);
        if root == 0 || root == self.nil {
            return Ok(Vec::new());
        }
        if peek(root + COLOR) != BLACK {
            return Err("red root".into());
        }
        let mut out = Vec::new();
        self.walk(peek, root, None, None, &mut out)?;
        if out.len() as u64 != peek(self.count) {
            return Err(format!("count {} but {} nodes", peek(self.count), out.len()));
        }
        Ok(out)
    }

    fn box_clone(&self) -> Box<dyn Structure> {
        Box::new(self.clone())
    }
}
