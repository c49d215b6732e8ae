use crate::exec::Shape;
use crate::ir::Ty;

/// A struct-like type with named fields, lowered to right-nested pairs in
/// declaration order. A single field lowers to the field itself.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordType {
    pub fields: Vec<(String, Ty)>,
}

impl RecordType {
    pub fn new(fields: &[(&str, Ty)]) -> RecordType {
        RecordType {
            fields: fields.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    /// `{re, du}` over reals.
    pub fn dual() -> RecordType {
        RecordType::new(&[("re", Ty::Real), ("du", Ty::Real)])
    }

    pub fn ty(&self) -> Ty {
        fn nest(fields: &[(String, Ty)]) -> Ty {
            match fields {
                [] => Ty::Unit,
                [(_, t)] => t.clone(),
                [(_, t), rest @ ..] => Ty::pair(t.clone(), nest(rest)),
            }
        }
        nest(&self.fields)
    }

    pub fn position(&self, field: &str) -> Option<usize> {
        self.fields.iter().position(|(n, _)| n == field)
    }

    /// Host shape marshalling this record as an object with the same field names.
    pub fn shape(&self) -> Option<Shape> {
        let mut fields = Vec::new();
        for (n, t) in &self.fields {
            fields.push((n.clone(), Shape::of(t)?));
        }
        Some(Shape::Record(fields))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowering_is_right_nested() {
        assert_eq!(RecordType::dual().ty(), Ty::dual());
        let r = RecordType::new(&[("a", Ty::Real), ("b", Ty::Bool), ("c", Ty::vec(2, Ty::Real))]);
        assert_eq!(r.ty(), Ty::pair(Ty::Real, Ty::pair(Ty::Bool, Ty::vec(2, Ty::Real))));
        assert_eq!(RecordType::new(&[("only", Ty::Real)]).ty(), Ty::Real);
        assert_eq!(r.shape().unwrap().ty(), r.ty());
    }
}
