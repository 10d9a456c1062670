//! Loop-nest program IR, its parser and the frontend normalizations.

mod normalize;
mod parse;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::affine::{AffineExpr, BoxDomain, Dim};
use crate::error::{Error, Result};

pub use normalize::{expand_unrolled, inline_constant_arrays, normalize_updates};
pub use parse::parse_program;

/// Element width of every buffer, in bits.
pub const ELEMENT_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BufferKind {
    Input,
    Intermediate,
    Output,
    Const,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferDecl {
    pub name: String,
    /// Extents, innermost (fastest varying) first.
    pub dims: Vec<i64>,
    pub kind: BufferKind,
    /// Initializer for `Const` buffers, flat with `dims[0]` fastest.
    pub data: Option<Vec<u16>>,
}

impl BufferDecl {
    pub fn len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat offset of an element (`dims[0]` fastest).
    pub fn flat(&self, idx: &[i64]) -> Option<usize> {
        if idx.len() != self.dims.len() {
            return None;
        }
        let mut off = 0usize;
        for (i, d) in idx.iter().zip(&self.dims).rev() {
            if *i < 0 || i >= d {
                return None;
            }
            off = off * *d as usize + *i as usize;
        }
        Some(off)
    }

    /// Row-major iteration domain over the buffer (last dim outermost),
    /// with iterators `d0..dn` named after the buffer dimension they walk.
    pub fn domain(&self) -> BoxDomain {
        BoxDomain {
            dims: self.dims.iter().enumerate().rev().map(|(i, &e)| Dim::new(&format!("d{i}"), 0, e)).collect(),
        }
    }

    /// Element visited at point `p` of [`BufferDecl::domain`].
    pub fn element_at(&self, p: &[i64]) -> Vec<i64> {
        p.iter().rev().copied().collect()
    }

    pub fn identity_access(&self) -> Vec<AffineExpr> {
        (0..self.dims.len()).map(|i| AffineExpr::var(&format!("d{i}"))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Access {
    pub buffer: String,
    pub idx: Vec<AffineExpr>,
}

impl Access {
    pub fn substitute(&self, name: &str, with: &AffineExpr) -> Access {
        Access { buffer: self.buffer.clone(), idx: self.idx.iter().map(|e| e.substitute(name, with)).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Shl,
    Shr,
    Min,
    Max,
    Absd,
    Lt,
}

impl BinOp {
    pub fn apply(self, a: u16, b: u16) -> u16 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Shl => if b >= 16 { 0 } else { a << b },
            BinOp::Shr => if b >= 16 { 0 } else { a >> b },
            BinOp::Min => a.min(b),
            BinOp::Max => a.max(b),
            BinOp::Absd => a.abs_diff(b),
            BinOp::Lt => (a < b) as u16,
        }
    }

    fn infix(self) -> Option<&'static str> {
        Some(match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::Lt => "<",
            _ => return None,
        })
    }

    fn func(self) -> &'static str {
        match self {
            BinOp::Min => "min",
            BinOp::Max => "max",
            BinOp::Absd => "absd",
            _ => unreachable!("infix op"),
        }
    }
}

/// Compute expression over 16-bit unsigned values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Const(u16),
    Read(Access),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Select(Box<Expr>, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// Balanced sum of `terms`.
    pub fn sum(mut terms: Vec<Expr>) -> Expr {
        match terms.len() {
            0 => Expr::Const(0),
            1 => terms.pop().unwrap(),
            n => {
                let rest = terms.split_off(n / 2);
                Expr::bin(BinOp::Add, Expr::sum(terms), Expr::sum(rest))
            }
        }
    }

    /// Reads in evaluation (depth-first, left-to-right) order.
    pub fn reads(&self) -> Vec<&Access> {
        let mut out = Vec::new();
        self.visit_reads(&mut |a| out.push(a));
        out
    }

    fn visit_reads<'a>(&'a self, f: &mut impl FnMut(&'a Access)) {
        match self {
            Expr::Const(_) => {}
            Expr::Read(a) => f(a),
            Expr::Bin(_, a, b) => {
                a.visit_reads(f);
                b.visit_reads(f);
            }
            Expr::Select(c, a, b) => {
                c.visit_reads(f);
                a.visit_reads(f);
                b.visit_reads(f);
            }
        }
    }

    /// Number of operator nodes (one processing element each).
    pub fn op_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Read(_) => 0,
            Expr::Bin(_, a, b) => 1 + a.op_count() + b.op_count(),
            Expr::Select(c, a, b) => 1 + c.op_count() + a.op_count() + b.op_count(),
        }
    }

    /// Evaluates, taking read values from `read` in [`Expr::reads`] order.
    pub fn eval_with(&self, read: &mut impl FnMut(&Access) -> u16) -> u16 {
        match self {
            Expr::Const(c) => *c,
            Expr::Read(a) => read(a),
            Expr::Bin(op, a, b) => {
                let x = a.eval_with(read);
                let y = b.eval_with(read);
                op.apply(x, y)
            }
            Expr::Select(c, a, b) => {
                let c = c.eval_with(read);
                let x = a.eval_with(read);
                let y = b.eval_with(read);
                if c != 0 { x } else { y }
            }
        }
    }

    pub fn map_reads(&self, f: &mut impl FnMut(&Access) -> Expr) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Read(a) => f(a),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.map_reads(f), b.map_reads(f)),
            Expr::Select(c, a, b) => {
                Expr::Select(Box::new(c.map_reads(f)), Box::new(a.map_reads(f)), Box::new(b.map_reads(f)))
            }
        }
    }

    pub fn substitute(&self, name: &str, with: &AffineExpr) -> Expr {
        self.map_reads(&mut |a| Expr::Read(a.substitute(name, with)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StmtKind {
    /// `target = value`
    Assign,
    /// `target += value`; starts from zero at the first reduction iteration.
    Accumulate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub target: Access,
    pub kind: StmtKind,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Loop {
    pub name: String,
    pub lo: i64,
    pub extent: i64,
    pub reduce: bool,
    pub unroll: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    /// Outermost first.
    pub loops: Vec<Loop>,
    pub body: Vec<Statement>,
    /// Compute pipeline depth in cycles.
    pub latency: i64,
    /// Enclosing top-level `for` group, if any.
    #[serde(default)]
    pub group: Option<usize>,
    /// Number of leading loops owned by the enclosing group.
    #[serde(default)]
    pub outer: usize,
}

impl Stage {
    pub fn domain(&self) -> BoxDomain {
        BoxDomain { dims: self.loops.iter().map(|l| Dim::new(&l.name, l.lo, l.extent)).collect() }
    }

    /// Domain of the final write: the loops without (innermost) rolled
    /// reduction loops.
    pub fn write_domain(&self) -> BoxDomain {
        BoxDomain {
            dims: self.loops.iter().filter(|l| !l.reduce).map(|l| Dim::new(&l.name, l.lo, l.extent)).collect(),
        }
    }

    pub fn reduction_loops(&self) -> impl Iterator<Item = &Loop> {
        self.loops.iter().filter(|l| l.reduce)
    }

    pub fn has_rolled_reduction(&self) -> bool {
        self.loops.iter().any(|l| l.reduce && !l.unroll)
    }

    pub fn statement(&self) -> &Statement {
        &self.body[0]
    }

    pub fn trip_count(&self) -> i64 {
        self.loops.iter().map(|l| l.extent).product()
    }

    pub fn target(&self) -> &str {
        &self.body[0].target.buffer
    }
}

/// A validated loop-nest program: buffers plus topologically ordered stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub buffers: Vec<BufferDecl>,
    pub stages: Vec<Stage>,
}

impl Program {
    pub fn buffer(&self, name: &str) -> Option<&BufferDecl> {
        self.buffers.iter().find(|b| b.name == name)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &BufferDecl> {
        self.buffers.iter().filter(|b| b.kind == BufferKind::Input)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &BufferDecl> {
        self.buffers.iter().filter(|b| b.kind == BufferKind::Output)
    }

    pub fn writer_of(&self, buffer: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.body.iter().any(|st| st.target.buffer == buffer))
    }

    pub fn readers_of(&self, buffer: &str) -> Vec<usize> {
        (0..self.stages.len())
            .filter(|&i| {
                self.stages[i].body.iter().any(|st| st.value.reads().iter().any(|a| a.buffer == buffer))
            })
            .collect()
    }

    /// Structural checks; every program handed to later passes satisfies them.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Frontend(m));
        let mut names = BTreeSet::new();
        for b in &self.buffers {
            if !names.insert(b.name.as_str()) {
                return err(format!("buffer {} declared twice", b.name));
            }
            if b.dims.is_empty() || b.dims.iter().any(|&d| d < 1) {
                return err(format!("buffer {} has an extent < 1", b.name));
            }
            match (&b.kind, &b.data) {
                (BufferKind::Const, Some(d)) if d.len() == b.len() => {}
                (BufferKind::Const, Some(d)) => {
                    return err(format!("const {} has {} values, expected {}", b.name, d.len(), b.len()))
                }
                (BufferKind::Const, None) => return err(format!("const {} has no data", b.name)),
                (_, Some(_)) => return err(format!("buffer {} is not const but has data", b.name)),
                _ => {}
            }
        }
        for (i, s) in self.stages.iter().enumerate() {
            let Some(g) = s.group else { continue };
            let first = self.stages.iter().position(|o| o.group == Some(g)).unwrap();
            if self.stages[first..i].iter().any(|o| o.group != Some(g)) {
                return err(format!("stage {} is separated from its group", s.name));
            }
            let lead = &self.stages[first];
            if s.outer != lead.outer || s.outer > s.loops.len() || s.loops[..s.outer] != lead.loops[..lead.outer] {
                return err(format!("stage {} does not share its group's loops", s.name));
            }
            if s.loops[..s.outer].iter().any(|l| l.reduce) {
                return err(format!("group loop of stage {} cannot be a reduction", s.name));
            }
        }
        let mut written: HashMap<&str, usize> = HashMap::new();
        let mut stage_names = BTreeSet::new();
        for (si, s) in self.stages.iter().enumerate() {
            if !stage_names.insert(s.name.as_str()) {
                return err(format!("stage {} declared twice", s.name));
            }
            let dom = s.domain();
            dom.validate()?;
            if s.body.is_empty() {
                return err(format!("stage {} has an empty body", s.name));
            }
            for l in &s.loops {
                if l.unroll && !l.reduce {
                    return err(format!("stage {}: only reduction loops may be unrolled ({})", s.name, l.name));
                }
            }
            let mut seen_reduce = false;
            for l in &s.loops {
                if l.reduce && !l.unroll {
                    seen_reduce = true;
                } else if seen_reduce && !l.reduce {
                    return err(format!("stage {}: rolled reduction loops must be innermost", s.name));
                }
            }
            for st in &s.body {
                let tb = st.target.buffer.as_str();
                let decl = self.buffer(tb).ok_or_else(|| Error::Frontend(format!("undeclared buffer {tb}")))?;
                if matches!(decl.kind, BufferKind::Input | BufferKind::Const) {
                    return err(format!("stage {} writes {} buffer {tb}", s.name, kind_word(decl.kind)));
                }
                match written.get(tb) {
                    Some(&w) if w != si => return err(format!("buffer {tb} written by more than one stage")),
                    _ => {
                        written.insert(tb, si);
                    }
                }
                self.check_access(s, &dom, &st.target)?;
                for r in st.value.reads() {
                    self.check_access(s, &dom, r)?;
                    let rb = self.buffer(&r.buffer).unwrap();
                    if r.buffer == tb {
                        return err(format!("stage {} reads its own target {tb}; use +=", s.name));
                    }
                    if matches!(rb.kind, BufferKind::Intermediate | BufferKind::Output)
                        && !written.contains_key(r.buffer.as_str())
                    {
                        return err(format!(
                            "stage {} reads {} before any earlier stage writes it",
                            s.name, r.buffer
                        ));
                    }
                }
            }
        }
        for b in &self.buffers {
            if b.kind == BufferKind::Output && !written.contains_key(b.name.as_str()) {
                return err(format!("output {} is never written", b.name));
            }
        }
        Ok(())
    }

    fn check_access(&self, s: &Stage, dom: &BoxDomain, a: &Access) -> Result<()> {
        let decl = self.buffer(&a.buffer).ok_or_else(|| Error::Frontend(format!("undeclared buffer {}", a.buffer)))?;
        if decl.dims.len() != a.idx.len() {
            return Err(Error::Frontend(format!(
                "stage {}: {} has {} dims but is indexed with {}",
                s.name,
                a.buffer,
                decl.dims.len(),
                a.idx.len()
            )));
        }
        for (k, (e, d)) in a.idx.iter().zip(&decl.dims).enumerate() {
            let (lo, hi) = e
                .range(dom)
                .map_err(|_| Error::Frontend(format!("stage {}: index {e} of {} uses an unknown iterator", s.name, a.buffer)))?;
            if lo < 0 || hi >= *d {
                return Err(Error::Frontend(format!(
                    "stage {}: index {k} of {} spans [{lo}, {hi}], outside [0, {}]",
                    s.name,
                    a.buffer,
                    d - 1
                )));
            }
        }
        Ok(())
    }

    /// Calls `f(stage, point)` for every iteration in program order. Stages
    /// of one group interleave per iteration of the group's loops.
    pub fn visit(&self, f: &mut dyn FnMut(usize, &[i64]) -> Result<()>) -> Result<()> {
        let mut i = 0;
        while i < self.stages.len() {
            let s = &self.stages[i];
            let Some(g) = s.group else {
                for p in s.domain().points() {
                    f(i, &p)?;
                }
                i += 1;
                continue;
            };
            let end = (i..self.stages.len()).find(|&j| self.stages[j].group != Some(g)).unwrap_or(self.stages.len());
            let outer = BoxDomain { dims: s.domain().dims[..s.outer].to_vec() };
            let inner: Vec<BoxDomain> =
                (i..end).map(|j| BoxDomain { dims: self.stages[j].domain().dims[s.outer..].to_vec() }).collect();
            for op in outer.points() {
                for (k, dom) in inner.iter().enumerate() {
                    let mut p = op.clone();
                    for ip in dom.points() {
                        p.truncate(op.len());
                        p.extend_from_slice(&ip);
                        f(i + k, &p)?;
                    }
                }
            }
            i = end;
        }
        Ok(())
    }

    /// Total compute operator count.
    pub fn op_count(&self) -> usize {
        self.stages.iter().flat_map(|s| &s.body).map(|st| st.value.op_count()).sum()
    }
}

fn kind_word(k: BufferKind) -> &'static str {
    match k {
        BufferKind::Input => "input",
        BufferKind::Intermediate => "intermediate",
        BufferKind::Output => "output",
        BufferKind::Const => "const",
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.buffer)?;
        for (i, e) in self.idx.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Read(a) => write!(f, "{a}"),
            Expr::Bin(op, a, b) => match op.infix() {
                Some(s) => write!(f, "({a} {s} {b})"),
                None => write!(f, "{}({a}, {b})", op.func()),
            },
            Expr::Select(c, a, b) => write!(f, "select({c}, {a}, {b})"),
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.buffers {
            let dims: String = b.dims.iter().map(|d| format!("[{d}]")).collect();
            match &b.data {
                Some(data) => {
                    let vals: Vec<String> = data.iter().map(|v| v.to_string()).collect();
                    writeln!(f, "const {}{} = {{{}}}", b.name, dims, vals.join(", "))?;
                }
                None => writeln!(f, "buffer {}{} : {}", b.name, dims, kind_word(b.kind))?,
            }
        }
        for (i, s) in self.stages.iter().enumerate() {
            let prev = if i > 0 { self.stages[i - 1].group } else { None };
            let next = self.stages.get(i + 1).and_then(|n| n.group);
            let indent = if s.group.is_some() { "  " } else { "" };
            if s.group.is_some() && s.group != prev {
                for l in &s.loops[..s.outer] {
                    write!(f, "for {} in [{}, {}] ", l.name, l.lo, l.extent)?;
                }
                writeln!(f, "{{")?;
            }
            write!(f, "{indent}stage {}", s.name)?;
            for l in &s.loops[s.outer..] {
                write!(f, " for {} in [{}, {}]", l.name, l.lo, l.extent)?;
            }
            writeln!(f, " {{")?;
            for st in &s.body {
                let op = match st.kind {
                    StmtKind::Assign => "=",
                    StmtKind::Accumulate => "+=",
                };
                writeln!(f, "{indent}  {} {} {}", st.target, op, st.value)?;
            }
            write!(f, "{indent}}}")?;
            for l in s.loops.iter().filter(|l| l.reduce) {
                write!(f, " reduce {}", l.name)?;
            }
            for l in s.loops.iter().filter(|l| l.unroll) {
                write!(f, " unroll {}", l.name)?;
            }
            writeln!(f, " latency {}", s.latency)?;
            if s.group.is_some() && s.group != next {
                writeln!(f, "}}")?;
            }
        }
        Ok(())
    }
}
