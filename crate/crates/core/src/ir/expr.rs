use std::collections::BTreeMap;
use std::fmt;

use super::types::{Kind, Ty};

/// A variable, dense within its function and numbered in binding order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FuncId(pub u32);

impl FuncId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A real literal compared bitwise, so that structural equality is an equivalence.
#[derive(Clone, Copy, Debug)]
pub struct Real(pub f64);

impl PartialEq for Real {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Real {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Not,
    Neg,
    Abs,
    Sgn,
    Ceil,
    Floor,
    Trunc,
    Sqrt,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 8] = [
        UnaryOp::Not,
        UnaryOp::Neg,
        UnaryOp::Abs,
        UnaryOp::Sgn,
        UnaryOp::Ceil,
        UnaryOp::Floor,
        UnaryOp::Trunc,
        UnaryOp::Sqrt,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Not => "!",
            UnaryOp::Neg => "-",
            UnaryOp::Abs => "abs",
            UnaryOp::Sgn => "sgn",
            UnaryOp::Ceil => "ceil",
            UnaryOp::Floor => "floor",
            UnaryOp::Trunc => "trunc",
            UnaryOp::Sqrt => "sqrt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    And,
    Or,
    Iff,
    Xor,
    Neq,
    Lt,
    Leq,
    Eq,
    Gt,
    Geq,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 14] = [
        BinaryOp::And,
        BinaryOp::Or,
        BinaryOp::Iff,
        BinaryOp::Xor,
        BinaryOp::Neq,
        BinaryOp::Lt,
        BinaryOp::Leq,
        BinaryOp::Eq,
        BinaryOp::Gt,
        BinaryOp::Geq,
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::And => "and",
            BinaryOp::Or => "or",
            BinaryOp::Iff => "iff",
            BinaryOp::Xor => "xor",
            BinaryOp::Neq => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Leq => "<=",
            BinaryOp::Eq => "==",
            BinaryOp::Gt => ">",
            BinaryOp::Geq => ">=",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    pub fn is_logic(self) -> bool {
        matches!(self, BinaryOp::And | BinaryOp::Or | BinaryOp::Iff | BinaryOp::Xor)
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinaryOp::Neq | BinaryOp::Lt | BinaryOp::Leq | BinaryOp::Eq | BinaryOp::Gt | BinaryOp::Geq
        )
    }

    pub fn is_arith(self) -> bool {
        matches!(self, BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Unit,
    True,
    False,
    Const(Real),
    /// A `Fin` literal; its `n` comes from the let's declared type.
    Fin(usize),
    Array(Vec<VarId>),
    Pair(VarId, VarId),
    Unary(UnaryOp, VarId),
    Binary(BinaryOp, VarId, VarId),
    Select(VarId, VarId, VarId),
    Accumulate(VarId, VarId),
    Index(VarId, VarId),
    Fst(VarId),
    Snd(VarId),
    RefIndex(VarId, VarId),
    RefFst(VarId),
    RefSnd(VarId),
    Call {
        func: FuncId,
        targs: Vec<Ty>,
        args: Vec<VarId>,
    },
    For {
        index: VarId,
        index_ty: Ty,
        body: Block,
    },
    Accum {
        acc: VarId,
        from: VarId,
        body: Block,
    },
}

impl Expr {
    pub fn real(c: f64) -> Expr {
        Expr::Const(Real(c))
    }

    /// Variables read by this expression, not counting nested blocks.
    pub fn operands(&self) -> Vec<VarId> {
        match self {
            Expr::Unit | Expr::True | Expr::False | Expr::Const(_) | Expr::Fin(_) => vec![],
            Expr::Array(xs) => xs.clone(),
            Expr::Pair(a, b)
            | Expr::Binary(_, a, b)
            | Expr::Accumulate(a, b)
            | Expr::Index(a, b)
            | Expr::RefIndex(a, b) => vec![*a, *b],
            Expr::Unary(_, a) | Expr::Fst(a) | Expr::Snd(a) | Expr::RefFst(a) | Expr::RefSnd(a) => {
                vec![*a]
            }
            Expr::Select(p, a, b) => vec![*p, *a, *b],
            Expr::Call { args, .. } => args.clone(),
            Expr::For { .. } => vec![],
            Expr::Accum { from, .. } => vec![*from],
        }
    }

    /// Rewrite every variable reference (operands, nested blocks and binders).
    pub fn map_vars(&self, f: &mut impl FnMut(VarId) -> VarId) -> Expr {
        match self {
            Expr::Unit => Expr::Unit,
            Expr::True => Expr::True,
            Expr::False => Expr::False,
            Expr::Const(c) => Expr::Const(*c),
            Expr::Fin(m) => Expr::Fin(*m),
            Expr::Array(xs) => Expr::Array(xs.iter().map(|&x| f(x)).collect()),
            Expr::Pair(a, b) => Expr::Pair(f(*a), f(*b)),
            Expr::Unary(op, a) => Expr::Unary(*op, f(*a)),
            Expr::Binary(op, a, b) => Expr::Binary(*op, f(*a), f(*b)),
            Expr::Select(p, a, b) => Expr::Select(f(*p), f(*a), f(*b)),
            Expr::Accumulate(a, b) => Expr::Accumulate(f(*a), f(*b)),
            Expr::Index(a, b) => Expr::Index(f(*a), f(*b)),
            Expr::Fst(a) => Expr::Fst(f(*a)),
            Expr::Snd(a) => Expr::Snd(f(*a)),
            Expr::RefIndex(a, b) => Expr::RefIndex(f(*a), f(*b)),
            Expr::RefFst(a) => Expr::RefFst(f(*a)),
            Expr::RefSnd(a) => Expr::RefSnd(f(*a)),
            Expr::Call { func, targs, args } => Expr::Call {
                func: *func,
                targs: targs.clone(),
                args: args.iter().map(|&x| f(x)).collect(),
            },
            Expr::For { index, index_ty, body } => Expr::For {
                index: f(*index),
                index_ty: index_ty.clone(),
                body: body.map_vars(f),
            },
            Expr::Accum { acc, from, body } => Expr::Accum {
                acc: f(*acc),
                from: f(*from),
                body: body.map_vars(f),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Let {
    pub var: VarId,
    pub ty: Ty,
    pub expr: Expr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub lets: Vec<Let>,
    pub result: VarId,
}

impl Block {
    pub fn map_vars(&self, f: &mut impl FnMut(VarId) -> VarId) -> Block {
        Block {
            lets: self
                .lets
                .iter()
                .map(|l| Let {
                    var: f(l.var),
                    ty: l.ty.clone(),
                    expr: l.expr.map_vars(f),
                })
                .collect(),
            result: f(self.result),
        }
    }

    /// Number of lets, including those in nested blocks.
    pub fn let_count(&self) -> usize {
        self.lets
            .iter()
            .map(|l| {
                1 + match &l.expr {
                    Expr::For { body, .. } | Expr::Accum { body, .. } => body.let_count(),
                    _ => 0,
                }
            })
            .sum()
    }

    /// Visit every let in preorder.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Let)) {
        for l in &self.lets {
            f(l);
            if let Expr::For { body, .. } | Expr::Accum { body, .. } = &l.expr {
                body.visit(f);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuncDef {
    pub name: String,
    pub generics: Vec<(String, Kind)>,
    pub params: Vec<(VarId, Ty)>,
    pub ret: Ty,
    pub body: Block,
    /// Optional debug names; unnamed variables print as `x<id>`.
    pub names: BTreeMap<VarId, String>,
}

impl FuncDef {
    pub fn param_types(&self) -> Vec<Ty> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn let_count(&self) -> usize {
        self.body.let_count()
    }

    /// One past the largest variable id in use.
    pub fn var_bound(&self) -> u32 {
        let mut max = 0;
        for (v, _) in &self.params {
            max = max.max(v.0 + 1);
        }
        let mut see = |v: VarId| max = max.max(v.0 + 1);
        fn walk(b: &Block, see: &mut impl FnMut(VarId)) {
            for l in &b.lets {
                see(l.var);
                match &l.expr {
                    Expr::For { index, body, .. } => {
                        see(*index);
                        walk(body, see);
                    }
                    Expr::Accum { acc, body, .. } => {
                        see(*acc);
                        walk(body, see);
                    }
                    _ => {}
                }
            }
        }
        walk(&self.body, &mut see);
        max
    }

    /// Renumber variables densely in binding order: parameters first, then each let
    /// followed by its block binder and the block body.
    pub fn normalize(&self) -> FuncDef {
        let mut map = BTreeMap::new();
        let mut next = 0u32;
        let mut bind = |v: VarId, map: &mut BTreeMap<VarId, VarId>| {
            map.insert(v, VarId(next));
            next += 1;
        };
        for (v, _) in &self.params {
            bind(*v, &mut map);
        }
        fn walk(b: &Block, map: &mut BTreeMap<VarId, VarId>, bind: &mut impl FnMut(VarId, &mut BTreeMap<VarId, VarId>)) {
            for l in &b.lets {
                bind(l.var, map);
                match &l.expr {
                    Expr::For { index, body, .. } => {
                        bind(*index, map);
                        walk(body, map, bind);
                    }
                    Expr::Accum { acc, body, .. } => {
                        bind(*acc, map);
                        walk(body, map, bind);
                    }
                    _ => {}
                }
            }
        }
        walk(&self.body, &mut map, &mut bind);
        // Unbound references (ill-scoped input) keep a fresh id past the bound ones.
        let mut extra = next;
        let mut f = |v: VarId| {
            *map.entry(v).or_insert_with(|| {
                let id = VarId(extra);
                extra += 1;
                id
            })
        };
        let params = self.params.iter().map(|(v, t)| (f(*v), t.clone())).collect();
        let body = self.body.map_vars(&mut f);
        // Keep only names that print unambiguously: valid, not reserved, first use wins.
        let mut names = BTreeMap::new();
        let mut taken = std::collections::BTreeSet::new();
        let mut named: Vec<(VarId, &String)> = self.names.iter().map(|(v, n)| (f(*v), n)).collect();
        named.sort();
        for (v, n) in named {
            if super::print::is_printable_var(n) && taken.insert(n.clone()) {
                names.insert(v, n.clone());
            }
        }
        FuncDef {
            name: self.name.clone(),
            generics: self.generics.clone(),
            params,
            ret: self.ret.clone(),
            body,
            names,
        }
    }
}

/// A host-implemented scalar primitive, invisible to the program transforms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpaqueDef {
    pub name: String,
    pub params: Vec<Ty>,
    pub ret: Ty,
    /// Key into the host routine table.
    pub routine: String,
}
