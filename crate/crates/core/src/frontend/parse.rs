//! Parser for the line-oriented loop-nest language:
//!
//! ```text
//! buffer NAME[D0][D1]... : input|intermediate|output
//! const NAME[D0]... = {v, ...}
//! stage NAME for it in [lo, extent] ... { NAME(e0, e1, ...) = expr } [reduce it] [unroll it] [latency L]
//! for it in [lo, extent] ... { stage ... }
//! ```
//!
//! `#` and `//` start comments. Statements inside `{}` are separated by
//! newlines or `;`. `+=` marks an accumulation. Stages inside a `for`
//! group share its loops and run interleaved, one group iteration at a time.

use std::collections::{HashMap, HashSet};

use crate::affine::AffineExpr;
use crate::error::{Error, Result};

use super::{Access, BinOp, BufferDecl, BufferKind, Expr, Loop, Program, Stage, Statement, StmtKind};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(i64),
    Punct(&'static str),
    Newline,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const PUNCT: &[&str] = &["+=", "<<", ">>", "(", ")", "[", "]", "{", "}", ",", ":", ";", "=", "+", "-", "*", "/", "<"];

fn lex(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    for (li, line) in src.lines().enumerate() {
        let line_no = li + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c.is_whitespace() {
                i += 1;
            } else if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
                break;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let s = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Ident(chars[s..i].iter().collect()), line: line_no, col });
            } else if c.is_ascii_digit() {
                let s = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let text: String = chars[s..i].iter().collect();
                let v = text
                    .parse::<i64>()
                    .map_err(|_| Error::Parse { line: line_no, col, msg: format!("bad number {text}") })?;
                out.push(Token { tok: Tok::Num(v), line: line_no, col });
            } else {
                let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
                let p = PUNCT
                    .iter()
                    .find(|p| rest.starts_with(**p))
                    .ok_or_else(|| Error::Parse { line: line_no, col, msg: format!("unexpected character '{c}'") })?;
                out.push(Token { tok: Tok::Punct(p), line: line_no, col });
                i += p.len();
            }
        }
        out.push(Token { tok: Tok::Newline, line: line_no, col: chars.len() + 1 });
    }
    let last = out.last().map(|t| t.line).unwrap_or(1);
    out.push(Token { tok: Tok::Eof, line: last, col: 1 });
    Ok(out)
}

/// Untyped expression tree; resolved to [`Expr`] or [`AffineExpr`] by context.
#[derive(Debug, Clone)]
enum PExpr {
    Num(i64),
    Ident(String),
    Call(String, Vec<(PExpr, usize, usize)>),
    Bin(&'static str, Box<PExpr>, Box<PExpr>),
    Neg(Box<PExpr>),
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    buffers: HashMap<String, BufferDecl>,
    groups: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        let t = self.peek();
        Err(Error::Parse { line: t.line, col: t.col, msg: msg.into() })
    }

    fn skip_newlines(&mut self) {
        while self.peek().tok == Tok::Newline {
            self.pos += 1;
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek().tok, Tok::Punct(q) if q == p)
    }

    fn expect_punct(&mut self, p: &str) -> Result<()> {
        if self.is_punct(p) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected '{p}', found {}", describe(&self.peek().tok)))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected '{kw}', found {}", describe(&self.peek().tok)))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.err(format!("expected a name, found {}", describe(&t))),
        }
    }

    fn int(&mut self) -> Result<i64> {
        let neg = if self.is_punct("-") {
            self.bump();
            true
        } else {
            false
        };
        match self.peek().tok {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            ref t => self.err(format!("expected an integer, found {}", describe(t))),
        }
    }

    fn dims(&mut self) -> Result<Vec<i64>> {
        let mut dims = Vec::new();
        while self.is_punct("[") {
            self.bump();
            let at = self.peek().clone();
            let d = self.int()?;
            if d < 1 {
                return Err(Error::Parse { line: at.line, col: at.col, msg: format!("zero extent: dimension {d} < 1") });
            }
            dims.push(d);
            self.expect_punct("]")?;
        }
        if dims.is_empty() {
            return self.err("expected at least one [extent]");
        }
        Ok(dims)
    }

    fn program(&mut self) -> Result<Program> {
        let mut buffers = Vec::new();
        let mut stages = Vec::new();
        loop {
            self.skip_newlines();
            if self.peek().tok == Tok::Eof {
                break;
            }
            if self.is_kw("buffer") {
                self.bump();
                let name = self.ident()?;
                let dims = self.dims()?;
                self.expect_punct(":")?;
                let kind = match self.ident()?.as_str() {
                    "input" => BufferKind::Input,
                    "intermediate" => BufferKind::Intermediate,
                    "output" => BufferKind::Output,
                    k => return self.err(format!("unknown buffer kind {k}")),
                };
                buffers.push(self.declare(BufferDecl { name, dims, kind, data: None })?);
            } else if self.is_kw("const") {
                self.bump();
                let name = self.ident()?;
                let dims = self.dims()?;
                self.expect_punct("=")?;
                self.expect_punct("{")?;
                let mut data = Vec::new();
                loop {
                    self.skip_newlines();
                    if self.is_punct("}") {
                        break;
                    }
                    let v = self.int()?;
                    if !(0..=u16::MAX as i64).contains(&v) {
                        return self.err(format!("constant {v} does not fit in 16 bits"));
                    }
                    data.push(v as u16);
                    self.skip_newlines();
                    if !self.is_punct(",") {
                        break;
                    }
                    self.bump();
                }
                self.skip_newlines();
                self.expect_punct("}")?;
                buffers.push(self.declare(BufferDecl { name, dims, kind: BufferKind::Const, data: Some(data) })?);
            } else if self.is_kw("stage") {
                stages.push(self.stage(&[], None)?);
            } else if self.is_kw("for") {
                let group = Some(self.groups);
                self.groups += 1;
                let mut outer = Vec::new();
                while self.is_kw("for") {
                    let l = self.loop_header(&outer)?;
                    outer.push(l);
                    self.skip_newlines();
                }
                self.expect_punct("{")?;
                let first = stages.len();
                loop {
                    self.skip_newlines();
                    if self.is_punct("}") {
                        self.bump();
                        break;
                    }
                    stages.push(self.stage(&outer, group)?);
                    if !matches!(self.peek().tok, Tok::Newline) && !self.is_punct("}") {
                        return self.err(format!("unexpected {} after stage", describe(&self.peek().tok)));
                    }
                }
                if stages.len() == first {
                    return self.err("empty loop group");
                }
            } else {
                return self.err(format!("expected 'buffer', 'const', 'for' or 'stage', found {}", describe(&self.peek().tok)));
            }
            if !matches!(self.peek().tok, Tok::Newline | Tok::Eof) {
                return self.err(format!("unexpected {} at end of item", describe(&self.peek().tok)));
            }
        }
        if buffers.is_empty() && stages.is_empty() {
            return self.err("empty program");
        }
        Ok(Program { buffers, stages })
    }

    fn declare(&mut self, b: BufferDecl) -> Result<BufferDecl> {
        if self.buffers.contains_key(&b.name) {
            return self.err(format!("buffer {} declared twice", b.name));
        }
        self.buffers.insert(b.name.clone(), b.clone());
        Ok(b)
    }

    fn loop_header(&mut self, existing: &[Loop]) -> Result<Loop> {
        self.expect_kw("for")?;
        let it = self.ident()?;
        if existing.iter().any(|l| l.name == it) {
            self.pos -= 1;
            return self.err(format!("iterator {it} declared twice"));
        }
        self.expect_kw("in")?;
        self.expect_punct("[")?;
        let lo = self.int()?;
        self.expect_punct(",")?;
        let at = self.peek().clone();
        let extent = self.int()?;
        if extent < 1 {
            return Err(Error::Parse { line: at.line, col: at.col, msg: format!("zero extent: loop {it} has extent {extent}") });
        }
        self.expect_punct("]")?;
        Ok(Loop { name: it, lo, extent, reduce: false, unroll: false })
    }

    fn stage(&mut self, outer: &[Loop], group: Option<usize>) -> Result<Stage> {
        self.expect_kw("stage")?;
        let name = self.ident()?;
        let mut loops: Vec<Loop> = outer.to_vec();
        while self.is_kw("for") {
            let l = self.loop_header(&loops)?;
            loops.push(l);
            self.skip_newlines();
        }
        let iters: HashSet<String> = loops.iter().map(|l| l.name.clone()).collect();
        self.expect_punct("{")?;
        let mut body = Vec::new();
        loop {
            while self.peek().tok == Tok::Newline || self.is_punct(";") {
                self.bump();
            }
            if self.is_punct("}") {
                self.bump();
                break;
            }
            body.push(self.statement(&iters)?);
            if !(self.peek().tok == Tok::Newline || self.is_punct(";") || self.is_punct("}")) {
                return self.err(format!("expected end of statement, found {}", describe(&self.peek().tok)));
            }
        }
        let mut latency = 0;
        loop {
            // attributes may continue on following lines
            let save = self.pos;
            self.skip_newlines();
            if self.is_kw("reduce") || self.is_kw("unroll") {
                let reduce = self.is_kw("reduce");
                self.bump();
                loop {
                    let it = self.ident()?;
                    let Some(l) = loops.iter_mut().find(|l| l.name == it) else {
                        self.pos -= 1;
                        return self.err(format!("unknown iterator {it}"));
                    };
                    if reduce {
                        l.reduce = true;
                    } else {
                        l.unroll = true;
                    }
                    if !self.is_punct(",") {
                        break;
                    }
                    self.bump();
                }
            } else if self.is_kw("latency") {
                self.bump();
                latency = self.int()?;
                if latency < 0 {
                    return self.err("latency must be >= 0");
                }
            } else {
                self.pos = save;
                break;
            }
        }
        Ok(Stage { name, loops, body, latency, group, outer: outer.len() })
    }

    fn statement(&mut self, iters: &HashSet<String>) -> Result<Statement> {
        let at = self.peek().clone();
        let name = self.ident()?;
        let target = match self.expr_after_ident(name, at.line, at.col)? {
            PExpr::Call(n, args) => self.access(n, &args, iters, at.line, at.col)?,
            _ => return Err(Error::Parse { line: at.line, col: at.col, msg: "expected a buffer write".into() }),
        };
        let kind = if self.is_punct("=") {
            StmtKind::Assign
        } else if self.is_punct("+=") {
            StmtKind::Accumulate
        } else {
            return self.err("expected '=' or '+='");
        };
        self.bump();
        let (line, col) = (self.peek().line, self.peek().col);
        let pe = self.expr()?;
        let value = self.compute(&pe, iters, line, col)?;
        Ok(Statement { target, kind, value })
    }

    // expr := shift ; shift := add (('<<'|'>>'|'<') add)* ; add := mul (('+'|'-') mul)* ; mul := unary (('*'|'/') unary)*
    fn expr(&mut self) -> Result<PExpr> {
        let mut lhs = self.additive()?;
        loop {
            let op = match self.peek().tok {
                Tok::Punct(p @ ("<<" | ">>" | "<")) => p,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.additive()?;
            lhs = PExpr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn additive(&mut self) -> Result<PExpr> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek().tok {
                Tok::Punct(p @ ("+" | "-")) => p,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = PExpr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn multiplicative(&mut self) -> Result<PExpr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Punct(p @ ("*" | "/")) => p,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = PExpr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<PExpr> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(PExpr::Num(v))
            }
            Tok::Punct("-") => {
                self.bump();
                Ok(PExpr::Neg(Box::new(self.unary()?)))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                self.expr_after_ident(name, t.line, t.col)
            }
            ref other => self.err(format!("expected an expression, found {}", describe(other))),
        }
    }

    fn expr_after_ident(&mut self, name: String, _line: usize, _col: usize) -> Result<PExpr> {
        if !self.is_punct("(") {
            return Ok(PExpr::Ident(name));
        }
        self.bump();
        let mut args = Vec::new();
        if !self.is_punct(")") {
            loop {
                let (l, c) = (self.peek().line, self.peek().col);
                args.push((self.expr()?, l, c));
                if !self.is_punct(",") {
                    break;
                }
                self.bump();
            }
        }
        self.expect_punct(")")?;
        Ok(PExpr::Call(name, args))
    }

    fn access(
        &self,
        name: String,
        args: &[(PExpr, usize, usize)],
        iters: &HashSet<String>,
        line: usize,
        col: usize,
    ) -> Result<Access> {
        if !self.buffers.contains_key(&name) {
            return Err(Error::Parse { line, col, msg: format!("undeclared buffer {name}") });
        }
        let idx = args
            .iter()
            .map(|(a, l, c)| affine(a, iters).map_err(|msg| Error::Parse { line: *l, col: *c, msg }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Access { buffer: name, idx })
    }

    fn compute(&self, e: &PExpr, iters: &HashSet<String>, line: usize, col: usize) -> Result<Expr> {
        let perr = |msg: String| Error::Parse { line, col, msg };
        Ok(match e {
            PExpr::Num(v) => {
                if !(0..=u16::MAX as i64).contains(v) {
                    return Err(perr(format!("constant {v} does not fit in 16 bits")));
                }
                Expr::Const(*v as u16)
            }
            PExpr::Neg(_) => return Err(perr("negative values are not representable".into())),
            PExpr::Ident(n) if iters.contains(n) => {
                return Err(perr(format!("iterator {n} used as a value")))
            }
            PExpr::Ident(n) => return Err(perr(format!("undeclared buffer {n}"))),
            PExpr::Call(n, args) => {
                let sub = |i: usize| self.compute(&args[i].0, iters, args[i].1, args[i].2);
                let want = |k: usize| {
                    if args.len() == k {
                        Ok(())
                    } else {
                        Err(perr(format!("{n} takes {k} arguments")))
                    }
                };
                match n.as_str() {
                    "min" | "max" | "absd" if !self.buffers.contains_key(n) => {
                        want(2)?;
                        let op = match n.as_str() {
                            "min" => BinOp::Min,
                            "max" => BinOp::Max,
                            _ => BinOp::Absd,
                        };
                        Expr::bin(op, sub(0)?, sub(1)?)
                    }
                    "select" if !self.buffers.contains_key(n) => {
                        want(3)?;
                        Expr::Select(Box::new(sub(0)?), Box::new(sub(1)?), Box::new(sub(2)?))
                    }
                    _ => Expr::Read(self.access(n.clone(), args, iters, line, col)?),
                }
            }
            PExpr::Bin(op, a, b) => {
                let x = self.compute(a, iters, line, col)?;
                if *op == "/" {
                    let d = match **b {
                        PExpr::Num(d) => d,
                        _ => return Err(perr("division is only supported by a power-of-two constant".into())),
                    };
                    if d < 1 || (d & (d - 1)) != 0 {
                        return Err(perr(format!("division by {d}: only powers of two are supported")));
                    }
                    return Ok(Expr::bin(BinOp::Shr, x, Expr::Const(d.trailing_zeros() as u16)));
                }
                let y = self.compute(b, iters, line, col)?;
                let op = match *op {
                    "+" => BinOp::Add,
                    "-" => BinOp::Sub,
                    "*" => BinOp::Mul,
                    "<<" => BinOp::Shl,
                    ">>" => BinOp::Shr,
                    "<" => BinOp::Lt,
                    o => return Err(perr(format!("unsupported operator {o}"))),
                };
                Expr::bin(op, x, y)
            }
        })
    }
}

fn affine(e: &PExpr, iters: &HashSet<String>) -> std::result::Result<AffineExpr, String> {
    Ok(match e {
        PExpr::Num(v) => AffineExpr::constant(*v),
        PExpr::Ident(n) if iters.contains(n) => AffineExpr::var(n),
        PExpr::Ident(n) => return Err(format!("unknown iterator {n}")),
        PExpr::Neg(a) => affine(a, iters)?.scale(-1),
        PExpr::Bin("+", a, b) => affine(a, iters)?.add(&affine(b, iters)?),
        PExpr::Bin("-", a, b) => affine(a, iters)?.add(&affine(b, iters)?.scale(-1)),
        PExpr::Bin("*", a, b) => {
            let (x, y) = (affine(a, iters)?, affine(b, iters)?);
            if x.is_constant() {
                y.scale(x.constant)
            } else if y.is_constant() {
                x.scale(y.constant)
            } else {
                return Err("non-affine index expression: product of iterators".into());
            }
        }
        PExpr::Bin(op, _, _) => return Err(format!("non-affine index expression: operator {op}")),
        PExpr::Call(n, _) => return Err(format!("non-affine index expression: {n}(...)")),
    })
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Num(v) => format!("'{v}'"),
        Tok::Punct(p) => format!("'{p}'"),
        Tok::Newline => "end of line".into(),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses and validates a program.
pub fn parse_program(text: &str) -> Result<Program> {
    let mut p = Parser { toks: lex(text)?, pos: 0, buffers: HashMap::new(), groups: 0 };
    let prog = p.program()?;
    prog.validate()?;
    Ok(prog)
}
