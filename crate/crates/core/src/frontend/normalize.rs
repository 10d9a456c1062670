//! Update normalization, unrolled-loop expansion and constant-array inlining.

use std::collections::BTreeSet;

use crate::affine::{AffineExpr, BoxDomain, Dim};

use super::{Access, BinOp, BufferKind, Expr, Program, Stage, Statement, StmtKind};

/// Merges `t = e0; t += e1; ...` chains on one target into a single
/// statement. Bodies mixing targets are left alone with a warning.
pub fn normalize_updates(prog: &Program) -> (Program, Vec<String>) {
    let mut out = prog.clone();
    let mut warnings = Vec::new();
    for s in &mut out.stages {
        if s.body.len() < 2 {
            continue;
        }
        let target = &s.body[0].target;
        let same_target = s.body.iter().all(|st| &st.target == target);
        let tail_accumulates = s.body[1..].iter().all(|st| st.kind == StmtKind::Accumulate);
        if !same_target || !tail_accumulates {
            warnings.push(format!(
                "stage {}: {} statements are not a single update chain; left unmerged",
                s.name,
                s.body.len()
            ));
            continue;
        }
        let kind = s.body[0].kind;
        let terms = s.body.iter().map(|st| st.value.clone()).collect();
        s.body = vec![Statement { target: target.clone(), kind, value: Expr::sum(terms) }];
    }
    (out, warnings)
}

/// Replaces every unrolled reduction loop by an explicit balanced sum over
/// its iterations. A stage left without reduction loops ends up with a
/// plain assignment.
pub fn expand_unrolled(prog: &Program) -> Program {
    let mut out = prog.clone();
    for s in &mut out.stages {
        *s = expand_stage(s);
    }
    out
}

fn expand_stage(s: &Stage) -> Stage {
    let unrolled: Vec<Dim> =
        s.loops.iter().filter(|l| l.unroll).map(|l| Dim::new(&l.name, l.lo, l.extent)).collect();
    if unrolled.is_empty() {
        return s.clone();
    }
    let udom = BoxDomain { dims: unrolled };
    let loops: Vec<_> = s.loops.iter().filter(|l| !l.unroll).cloned().collect();
    let rolled_left = loops.iter().any(|l| l.reduce);
    let subst = |e: &Expr, p: &[i64]| {
        udom.dims.iter().zip(p).fold(e.clone(), |acc, (d, v)| acc.substitute(&d.name, &AffineExpr::constant(*v)))
    };
    let subst_access = |a: &Access, p: &[i64]| {
        udom.dims.iter().zip(p).fold(a.clone(), |acc, (d, v)| acc.substitute(&d.name, &AffineExpr::constant(*v)))
    };
    let last = udom.last_point();
    let body = s
        .body
        .iter()
        .map(|st| match st.kind {
            StmtKind::Accumulate => {
                let terms = udom.points().map(|p| subst(&st.value, &p)).collect();
                Statement {
                    target: subst_access(&st.target, &last),
                    kind: if rolled_left { StmtKind::Accumulate } else { StmtKind::Assign },
                    value: Expr::sum(terms),
                }
            }
            StmtKind::Assign => Statement {
                target: subst_access(&st.target, &last),
                kind: StmtKind::Assign,
                value: subst(&st.value, &last),
            },
        })
        .collect();
    Stage { loops, body, ..s.clone() }
}

/// Folds reads of `const` arrays whose index depends only on unrolled
/// iterators into literals, expanding those loops first. Arrays indexed
/// by other iterators are kept as read-only memories.
pub fn inline_constant_arrays(prog: &Program) -> (Program, Vec<String>) {
    let mut out = prog.clone();
    let mut warnings = Vec::new();
    let is_const = |name: &str| prog.buffer(name).map(|b| b.kind == BufferKind::Const).unwrap_or(false);
    for s in &mut out.stages {
        let unrolled: BTreeSet<&str> = s.loops.iter().filter(|l| l.unroll).map(|l| l.name.as_str()).collect();
        let mut needs_expand = false;
        for st in &s.body {
            for r in st.value.reads() {
                if !is_const(&r.buffer) {
                    continue;
                }
                let its: BTreeSet<&str> = r.idx.iter().flat_map(|e| e.iterators()).collect();
                if its.iter().all(|i| unrolled.contains(i)) {
                    needs_expand |= !its.is_empty();
                } else {
                    let w = format!("const {} indexed by loop iterators in stage {}; kept as a read-only memory", r.buffer, s.name);
                    if !warnings.contains(&w) {
                        warnings.push(w);
                    }
                }
            }
        }
        if needs_expand {
            *s = expand_stage(s);
        }
        for st in &mut s.body {
            let folded = st.value.map_reads(&mut |a| {
                let b = prog.buffer(&a.buffer).unwrap();
                if b.kind == BufferKind::Const && a.idx.iter().all(|e| e.is_constant()) {
                    let idx: Vec<i64> = a.idx.iter().map(|e| e.constant).collect();
                    Expr::Const(b.data.as_ref().unwrap()[b.flat(&idx).unwrap()])
                } else {
                    Expr::Read(a.clone())
                }
            });
            st.value = fold(&folded);
        }
    }
    let used: BTreeSet<String> =
        out.stages.iter().flat_map(|s| &s.body).flat_map(|st| st.value.reads()).map(|a| a.buffer.clone()).collect();
    out.buffers.retain(|b| b.kind != BufferKind::Const || used.contains(&b.name));
    (out, warnings)
}

/// Constant folding that never drops a read.
fn fold(e: &Expr) -> Expr {
    match e {
        Expr::Bin(op, a, b) => {
            let (a, b) = (fold(a), fold(b));
            match (op, &a, &b) {
                (_, Expr::Const(x), Expr::Const(y)) => Expr::Const(op.apply(*x, *y)),
                (BinOp::Mul, Expr::Const(1), _) | (BinOp::Add, Expr::Const(0), _) => b,
                (BinOp::Mul, _, Expr::Const(1))
                | (BinOp::Add, _, Expr::Const(0))
                | (BinOp::Sub, _, Expr::Const(0))
                | (BinOp::Shl | BinOp::Shr, _, Expr::Const(0)) => a,
                _ => Expr::bin(*op, a, b),
            }
        }
        Expr::Select(c, a, b) => Expr::Select(Box::new(fold(c)), Box::new(fold(a)), Box::new(fold(b))),
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_program;

    #[test]
    fn merges_nine_updates() {
        let mut src = String::from("buffer a[10][10] : input\nbuffer b[8][8] : output\nstage s for y in [0,8] for x in [0,8] {\n");
        for dy in 0..3 {
            for dx in 0..3 {
                let op = if dx + dy == 0 { "=" } else { "+=" };
                src += &format!("  b(x, y) {op} a(x+{dx}, y+{dy})\n");
            }
        }
        src += "}\n";
        let p = parse_program(&src).unwrap();
        assert_eq!(p.stages[0].body.len(), 9);
        let (q, w) = normalize_updates(&p);
        assert!(w.is_empty());
        assert_eq!(q.stages[0].body.len(), 1);
        assert_eq!(q.stages[0].statement().value.reads().len(), 9);
        assert_eq!(q.stages[0].statement().kind, StmtKind::Assign);
    }

    #[test]
    fn mixed_targets_left_alone() {
        let p = parse_program(
            "buffer a[4] : input\nbuffer b[4] : output\nbuffer c[4] : output\nstage s for x in [0,4] { b(x) = a(x); c(x) = a(x) }",
        )
        .unwrap();
        let (q, w) = normalize_updates(&p);
        assert_eq!(q, p);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn unrolled_weights_are_folded() {
        let p = parse_program(
            "buffer a[10] : input\nbuffer b[8] : output\nconst w[3] = {1, 2, 1}\n\
             stage s for x in [0,8] for i in [0,3] { b(x) += w(i) * a(x+i) } reduce i unroll i",
        )
        .unwrap();
        let (q, w) = inline_constant_arrays(&p);
        assert!(w.is_empty());
        assert!(q.buffer("w").is_none());
        let st = q.stages[0].statement();
        assert_eq!(st.kind, StmtKind::Assign);
        assert_eq!(q.stages[0].loops.len(), 1);
        assert!(st.value.reads().iter().all(|r| r.buffer == "a"));
        assert_eq!(st.value.reads().len(), 3);
    }

    #[test]
    fn rolled_weights_are_retained() {
        let p = parse_program(
            "buffer a[10] : input\nbuffer b[8] : output\nconst w[3] = {1, 2, 1}\n\
             stage s for x in [0,8] for i in [0,3] { b(x) += w(i) * a(x+i) } reduce i",
        )
        .unwrap();
        let (q, w) = inline_constant_arrays(&p);
        assert_eq!(w.len(), 1);
        assert!(q.buffer("w").is_some());
        assert_eq!(q.stages[0].loops.len(), 2);
    }
}
