//! Prompt rendering.
//!
//! Templates live in `templates/*.txt` with `{placeholder}` slots and are
//! filled in a single left-to-right pass, so substituted text containing
//! braces is never re-expanded.

use crate::graph::{EdgeLabel, NodeId, Pair, SignedConfidence, VariableSet};

use super::{
    GlobalUpdateContext, LocalUpdateContext, PredictorError, PromptContext, ProposalContext, Relation,
};

pub const ZERO_SHOT_TEMPLATE: &str = include_str!("../../templates/zero_shot.txt");
pub const PARENT_UPDATE_TEMPLATE: &str = include_str!("../../templates/parent_update.txt");
pub const CHILD_UPDATE_TEMPLATE: &str = include_str!("../../templates/child_update.txt");
pub const GLOBAL_UPDATE_TEMPLATE: &str = include_str!("../../templates/global_update.txt");
pub const SELECT_EXPERIMENTS_TEMPLATE: &str = include_str!("../../templates/select_experiments.txt");

/// Substitutes `{key}` placeholders. Unknown placeholders are an error so a
/// template typo cannot silently leak into a prompt.
pub fn fill(template: &str, values: &[(&str, &str)]) -> Result<String, PredictorError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| {
            PredictorError::Contract("unterminated placeholder in template".into())
        })?;
        let key = &after[..close];
        let value = values
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| PredictorError::Contract(format!("no value for placeholder {{{key}}}")))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// One `name: description` line per variable in id order, skipping `exclude`.
pub fn variables_info(variables: &VariableSet, exclude: &[NodeId]) -> String {
    variables
        .iter()
        .filter(|v| !exclude.contains(&v.id))
        .map(|v| format!("{}: {}", v.name, v.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `(A->B,CONF)` when predicted present, `(NOT A->B, CONF)` when absent, with
/// the magnitude rounded to an integer.
pub fn edge_notation(variables: &VariableSet, pair: Pair, confidence: SignedConfidence) -> String {
    let (a, b) = (variables.name(pair.parent), variables.name(pair.child));
    let magnitude = confidence.magnitude().round() as i64;
    match confidence.label() {
        EdgeLabel::Present => format!("({a}->{b},{magnitude})"),
        EdgeLabel::Absent => format!("(NOT {a}->{b}, {magnitude})"),
    }
}

/// Edge without a confidence: `(A->B)` or `(NOT A->B)`.
pub fn label_notation(variables: &VariableSet, pair: Pair, label: EdgeLabel) -> String {
    let (a, b) = (variables.name(pair.parent), variables.name(pair.child));
    match label {
        EdgeLabel::Present => format!("({a}->{b})"),
        EdgeLabel::Absent => format!("(NOT {a}->{b})"),
    }
}

pub fn render_zero_shot_prompt(ctx: &PromptContext<'_>) -> Result<String, PredictorError> {
    ctx.validate()?;
    let info = variables_info(ctx.variables, &[ctx.target.id, ctx.parent.id]);
    fill(
        ZERO_SHOT_TEMPLATE,
        &[
            ("task_description", &ctx.variables.task_description),
            ("target", &ctx.target.name),
            ("parent", &ctx.parent.name),
            ("variables_info", &info),
            ("target_info", &ctx.target.description),
            ("parent_info", &ctx.parent.description),
        ],
    )
}

pub fn render_update_prompt(ctx: &LocalUpdateContext<'_>) -> Result<String, PredictorError> {
    ctx.validate()?;
    let vars = ctx.variables;
    let info = variables_info(vars, &[]);
    let feedback = edge_notation(vars, ctx.experiment, SignedConfidence::certain(ctx.revealed));
    let prior = edge_notation(vars, ctx.experiment, ctx.experiment_prior);
    let other = edge_notation(vars, ctx.target, ctx.target_confidence);
    let (template, endpoint_key, endpoint) = match ctx.relation {
        Relation::SharesParent => (PARENT_UPDATE_TEMPLATE, "parent", vars.name(ctx.experiment.parent)),
        Relation::SharesChild => (CHILD_UPDATE_TEMPLATE, "child", vars.name(ctx.experiment.child)),
    };
    fill(
        template,
        &[
            ("variables_info", &info),
            ("experiment_feedback", &feedback),
            ("experiment_prediction", &prior),
            (endpoint_key, endpoint),
            ("other_edge_prediction", &other),
        ],
    )
}

pub fn render_global_prompt(ctx: &GlobalUpdateContext<'_>) -> Result<String, PredictorError> {
    let vars = ctx.variables;
    let prediction = vars
        .candidate_edges()
        .into_iter()
        .zip(ctx.confidences)
        .map(|(p, c)| edge_notation(vars, p, *c))
        .collect::<Vec<_>>()
        .join("\n");
    let feedback = ctx
        .feedback
        .iter()
        .map(|(p, l)| edge_notation(vars, *p, SignedConfidence::certain(*l)))
        .collect::<Vec<_>>()
        .join("\n");
    fill(
        GLOBAL_UPDATE_TEMPLATE,
        &[
            ("task_description", &vars.task_description),
            ("variables_info", &variables_info(vars, &[])),
            ("graph_prediction", &prediction),
            ("experiment_feedback", &feedback),
        ],
    )
}

pub fn render_selection_prompt(ctx: &ProposalContext<'_>) -> Result<String, PredictorError> {
    let vars = ctx.variables;
    let edges = vars.candidate_edges();
    let prediction = edges
        .iter()
        .zip(ctx.labels)
        .map(|(p, l)| label_notation(vars, *p, *l))
        .collect::<Vec<_>>()
        .join("\n");
    let done = edges
        .iter()
        .zip(ctx.experimented)
        .filter(|(_, e)| **e)
        .map(|(p, _)| format!("{}->{}", vars.name(p.parent), vars.name(p.child)))
        .collect::<Vec<_>>();
    let done = if done.is_empty() { "(none)".to_string() } else { done.join("\n") };
    fill(
        SELECT_EXPERIMENTS_TEMPLATE,
        &[
            ("task_description", &vars.task_description),
            ("variables_info", &variables_info(vars, &[])),
            ("graph_prediction", &prediction),
            ("experimented_edges", &done),
            ("count", &ctx.count.to_string()),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars() -> VariableSet {
        VariableSet::from_names(
            "Variables of a lung cancer study.",
            [("A", "smoking status"), ("B", "lung cancer"), ("C", "")],
        )
        .unwrap()
    }

    #[test]
    fn fill_is_single_pass() {
        let out = fill("x {a} y {b}", &[("a", "{b}"), ("b", "2")]).unwrap();
        assert_eq!(out, "x {b} y 2");
        assert!(fill("{missing}", &[]).is_err());
        assert!(fill("{open", &[]).is_err());
    }

    #[test]
    fn templates_have_no_latex_residue() {
        for t in [ZERO_SHOT_TEMPLATE, PARENT_UPDATE_TEMPLATE, CHILD_UPDATE_TEMPLATE] {
            assert!(!t.contains('$') && !t.contains('\\'));
            assert!(!t.ends_with('\n'));
        }
    }

    #[test]
    fn zero_shot_excludes_pair_from_info() {
        let v = vars();
        let ctx = PromptContext::for_pair(&v, Pair::new(0, 2)).unwrap();
        let text = render_zero_shot_prompt(&ctx).unwrap();
        assert!(text.contains("\n\nB: lung cancer\n\n"));
        assert!(text.ends_with("Information about C:\n\n\nInformation about A:\nsmoking status"));
    }

    #[test]
    fn parent_equal_to_target_is_rejected() {
        let v = vars();
        let same = v.get(1).unwrap();
        let ctx = PromptContext { variables: &v, target: same, parent: same };
        assert!(matches!(render_zero_shot_prompt(&ctx), Err(PredictorError::Contract(_))));
        assert!(PromptContext::for_pair(&v, Pair::new(1, 1)).is_err());
    }

    #[test]
    fn notation_rounds_magnitude() {
        let v = vars();
        assert_eq!(edge_notation(&v, Pair::new(0, 1), SignedConfidence::new(-73.4)), "(NOT A->B, 73)");
        assert_eq!(edge_notation(&v, Pair::new(0, 1), SignedConfidence::new(12.5)), "(A->B,13)");
        assert_eq!(edge_notation(&v, Pair::new(2, 0), SignedConfidence::new(0.0)), "(C->A,0)");
    }

    #[test]
    fn update_dispatch_by_relation() {
        let v = vars();
        let mut ctx = LocalUpdateContext {
            variables: &v,
            experiment: Pair::new(0, 1),
            revealed: EdgeLabel::Present,
            experiment_prior: SignedConfidence::new(20.0),
            target: Pair::new(0, 2),
            target_confidence: SignedConfidence::new(-40.0),
            relation: Relation::SharesParent,
        };
        let parent = render_update_prompt(&ctx).unwrap();
        assert!(parent.contains("the other edges of A based on"));
        assert!(parent.contains("how similar the new child is to the experimental child"));

        ctx.target = Pair::new(2, 1);
        ctx.relation = Relation::SharesChild;
        let child = render_update_prompt(&ctx).unwrap();
        assert!(child.contains("the other edges of B based on"));
        assert!(child.contains("how similar the new parent is to the experiment parent"));

        ctx.relation = Relation::SharesParent;
        assert!(render_update_prompt(&ctx).is_err());

        ctx.relation = Relation::SharesChild;
        ctx.target_confidence = SignedConfidence::new(-100.0);
        assert!(render_update_prompt(&ctx).is_err());
    }
}
