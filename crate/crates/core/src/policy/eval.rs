use std::cmp::Ordering;

use super::ast::{AttrPath, CmpOp, Expr, Operand, Root};
use super::RequestContext;

/// A resolved operand. Attribute values are strings; integer literals are
/// carried as their decimal text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Str(String),
    Set(Vec<String>),
}

fn resolve_path(path: &AttrPath, req: &RequestContext) -> Option<String> {
    let key = path.key();
    match path.root {
        Root::Action => path.segments.is_empty().then(|| req.action.clone()),
        _ if path.segments.is_empty() => None,
        Root::Subject => match key.as_str() {
            "kind" => Some(req.subject.kind.as_str().to_owned()),
            "trust_domain" => Some(req.subject.trust_domain.clone()),
            "uri" => Some(req.subject.canonical_uri.clone()),
            _ => req.subject.attributes.get(&key).cloned(),
        },
        Root::Resource => req.resource.get(&key).cloned(),
        Root::Context => req.context.get(&key).cloned(),
        Root::Unknown(_) => None,
    }
}

/// `None` means the attribute is absent.
pub fn resolve(operand: &Operand, req: &RequestContext) -> Option<Value> {
    match operand {
        Operand::Attr(p) => resolve_path(p, req).map(Value::Str),
        Operand::Str(s) => Some(Value::Str(s.clone())),
        Operand::Int(i) => Some(Value::Str(i.to_string())),
        Operand::Set(items) => Some(Value::Set(items.clone())),
    }
}

fn as_int(s: &str) -> Option<i64> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn compare_str(a: &str, b: &str) -> Ordering {
    match (as_int(a), as_int(b)) {
        (Some(x), Some(y)) => x.cmp(&y),
        _ => a.as_bytes().cmp(b.as_bytes()),
    }
}

fn str_eq(a: &str, b: &str) -> bool {
    compare_str(a, b) == Ordering::Equal
}

fn set_eq(a: &[String], b: &[String]) -> bool {
    a.iter().all(|x| b.iter().any(|y| str_eq(x, y)))
        && b.iter().all(|y| a.iter().any(|x| str_eq(x, y)))
}

/// Glob match supporting `*` (any run, including empty) and `?` (exactly
/// one character). Every other character is literal.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0usize, 0usize);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || (p[pi] != '*' && p[pi] == t[ti])) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

/// Applies one comparison operator. Kind mismatches (string vs set) are
/// non-matching, like absent attributes.
pub fn matches(lhs: &Value, op: CmpOp, rhs: &Value) -> bool {
    use Value::{Set, Str};
    match (op, lhs, rhs) {
        (CmpOp::Eq, Str(a), Str(b)) => str_eq(a, b),
        (CmpOp::Eq, Set(a), Set(b)) => set_eq(a, b),
        (CmpOp::Ne, Str(a), Str(b)) => !str_eq(a, b),
        (CmpOp::Ne, Set(a), Set(b)) => !set_eq(a, b),
        (CmpOp::Lt, Str(a), Str(b)) => compare_str(a, b) == Ordering::Less,
        (CmpOp::Le, Str(a), Str(b)) => compare_str(a, b) != Ordering::Greater,
        (CmpOp::Gt, Str(a), Str(b)) => compare_str(a, b) == Ordering::Greater,
        (CmpOp::Ge, Str(a), Str(b)) => compare_str(a, b) != Ordering::Less,
        (CmpOp::In, Str(a), Set(b)) => b.iter().any(|y| str_eq(a, y)),
        // A string-valued attribute on the right is a comma-separated list.
        (CmpOp::In, Str(a), Str(b)) => b.split(',').any(|y| str_eq(a, y.trim())),
        (CmpOp::In, Set(a), Set(b)) => a.iter().all(|x| b.iter().any(|y| str_eq(x, y))),
        (CmpOp::Matches, Str(a), Str(pattern)) => glob_match(pattern, a),
        _ => false,
    }
}

pub(super) fn eval_expr(expr: &Expr, req: &RequestContext) -> bool {
    match expr {
        Expr::Bool(b) => *b,
        Expr::Not(inner) => !eval_expr(inner, req),
        Expr::And(items) => items.iter().all(|e| eval_expr(e, req)),
        Expr::Or(items) => items.iter().any(|e| eval_expr(e, req)),
        Expr::Cmp { lhs, op, rhs } => match (resolve(lhs, req), resolve(rhs, req)) {
            (Some(l), Some(r)) => matches(&l, *op, &r),
            _ => false,
        },
    }
}
