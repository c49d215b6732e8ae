use std::collections::BTreeMap;

use super::expr::{Block, Expr, FuncDef, VarId};
use super::registry::Registry;

/// Equality of two definitions up to a consistent renaming of variables.
/// Callees are compared by name, so the two sides may live in different registries.
pub fn alpha_equivalent(ra: &Registry, a: &FuncDef, rb: &Registry, b: &FuncDef) -> bool {
    let mut eq = Alpha {
        ra,
        rb,
        fwd: BTreeMap::new(),
        back: BTreeMap::new(),
    };
    a.generics == b.generics
        && a.ret == b.ret
        && a.params.len() == b.params.len()
        && a.params
            .iter()
            .zip(&b.params)
            .all(|((x, tx), (y, ty))| tx == ty && eq.bind(*x, *y))
        && eq.block(&a.body, &b.body)
}

struct Alpha<'a> {
    ra: &'a Registry,
    rb: &'a Registry,
    fwd: BTreeMap<VarId, VarId>,
    back: BTreeMap<VarId, VarId>,
}

impl Alpha<'_> {
    fn bind(&mut self, x: VarId, y: VarId) -> bool {
        if self.fwd.contains_key(&x) || self.back.contains_key(&y) {
            return false;
        }
        self.fwd.insert(x, y);
        self.back.insert(y, x);
        true
    }

    fn same(&self, x: VarId, y: VarId) -> bool {
        self.fwd.get(&x) == Some(&y)
    }

    fn all(&self, xs: &[VarId], ys: &[VarId]) -> bool {
        xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| self.same(*x, *y))
    }

    fn block(&mut self, a: &Block, b: &Block) -> bool {
        if a.lets.len() != b.lets.len() {
            return false;
        }
        for (la, lb) in a.lets.iter().zip(&b.lets) {
            if la.ty != lb.ty || !self.expr(&la.expr, &lb.expr) || !self.bind(la.var, lb.var) {
                return false;
            }
        }
        self.same(a.result, b.result)
    }

    fn expr(&mut self, a: &Expr, b: &Expr) -> bool {
        use Expr::*;
        match (a, b) {
            (Unit, Unit) | (True, True) | (False, False) => true,
            (Const(x), Const(y)) => x == y,
            (Fin(x), Fin(y)) => x == y,
            (Array(xs), Array(ys)) => self.all(xs, ys),
            (Pair(a1, a2), Pair(b1, b2))
            | (Accumulate(a1, a2), Accumulate(b1, b2))
            | (Index(a1, a2), Index(b1, b2))
            | (RefIndex(a1, a2), RefIndex(b1, b2)) => self.same(*a1, *b1) && self.same(*a2, *b2),
            (Unary(o1, x), Unary(o2, y)) => o1 == o2 && self.same(*x, *y),
            (Binary(o1, a1, a2), Binary(o2, b1, b2)) => {
                o1 == o2 && self.same(*a1, *b1) && self.same(*a2, *b2)
            }
            (Select(p, x, y), Select(q, u, v)) => self.all(&[*p, *x, *y], &[*q, *u, *v]),
            (Fst(x), Fst(y)) | (Snd(x), Snd(y)) | (RefFst(x), RefFst(y)) | (RefSnd(x), RefSnd(y)) => {
                self.same(*x, *y)
            }
            (
                Call { func: f, targs: ta, args: xa },
                Call { func: g, targs: tb, args: xb },
            ) => self.ra.name(*f) == self.rb.name(*g) && ta == tb && self.all(xa, xb),
            (
                For { index: i, index_ty: ti, body: ba },
                For { index: j, index_ty: tj, body: bb },
            ) => ti == tj && self.bind(*i, *j) && self.block(ba, bb),
            (
                Accum { acc: x, from: fa, body: ba },
                Accum { acc: y, from: fb, body: bb },
            ) => self.same(*fa, *fb) && self.bind(*x, *y) && self.block(ba, bb),
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse::parse_ir;

    #[test]
    fn renaming_is_ignored() {
        let a = parse_ir("def f(u: Real): Real =\n  let v: Real = -u in\n  v\n").unwrap();
        let b = parse_ir("def f(p: Real): Real = let q: Real = -p in q").unwrap();
        let c = parse_ir("def f(p: Real): Real = let q: Real = abs p in q").unwrap();
        let fa = a.def(a.lookup("f").unwrap()).unwrap();
        let fb = b.def(b.lookup("f").unwrap()).unwrap();
        let fc = c.def(c.lookup("f").unwrap()).unwrap();
        assert!(alpha_equivalent(&a, fa, &b, fb));
        assert!(!alpha_equivalent(&a, fa, &c, fc));
    }
}
