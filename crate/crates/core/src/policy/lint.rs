use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{Effect, Expr, Operand, Root};
use super::PolicySet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LintCode {
    Unreachable,
    UnknownRoot,
    UnpopulatedAttribute,
    Shadowed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintWarning {
    pub code: LintCode,
    pub policy_id: String,
    pub message: String,
}

impl fmt::Display for LintWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "warning[{}]: {}", self.policy_id, self.message)
    }
}

fn operands<'a>(expr: &'a Expr, out: &mut Vec<&'a Operand>) {
    match expr {
        Expr::Bool(_) => {}
        Expr::Not(inner) => operands(inner, out),
        Expr::And(items) | Expr::Or(items) => items.iter().for_each(|e| operands(e, out)),
        Expr::Cmp { lhs, rhs, .. } => {
            out.push(lhs);
            out.push(rhs);
        }
    }
}

pub fn lint(ps: &PolicySet) -> Vec<LintWarning> {
    let mut warnings = Vec::new();
    let policies = ps.policies();
    for p in policies {
        let warn = |code, message: String| LintWarning {
            code,
            policy_id: p.id.clone(),
            message,
        };
        if p.condition == Expr::Bool(false) {
            warnings.push(warn(LintCode::Unreachable, "condition is literally `false`".into()));
        }
        let mut ops = Vec::new();
        operands(&p.condition, &mut ops);
        for op in ops {
            let Operand::Attr(path) = op else { continue };
            match &path.root {
                Root::Unknown(root) => warnings.push(warn(
                    LintCode::UnknownRoot,
                    format!("unknown root `{root}` in `{path}`; expected subject, action, resource or context"),
                )),
                Root::Action if !path.segments.is_empty() => warnings.push(warn(
                    LintCode::UnpopulatedAttribute,
                    format!("`{path}` is never populated: `action` is a plain string"),
                )),
                Root::Subject | Root::Resource | Root::Context if path.segments.is_empty() => {
                    warnings.push(warn(
                        LintCode::UnpopulatedAttribute,
                        format!("`{path}` is a map and never compares as a value"),
                    ))
                }
                _ => {}
            }
        }
    }
    for (i, a) in policies.iter().enumerate() {
        for b in &policies[i + 1..] {
            if a.condition == b.condition && a.effect != b.effect {
                let (permit, deny) = if a.effect == Effect::Permit { (a, b) } else { (b, a) };
                warnings.push(LintWarning {
                    code: LintCode::Shadowed,
                    policy_id: permit.id.clone(),
                    message: format!(
                        "`{}` can never grant: deny `{}` has the identical condition",
                        permit.id, deny.id
                    ),
                });
            }
        }
    }
    warnings
}
