//! Prompt assembly: sequences mixing text tokens with a block of relation
//! slots, used both for structure-aware pretraining and intent scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    QueryQuery,
    QueryAnswer,
    QueryIntent,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [
        RelationKind::QueryQuery,
        RelationKind::QueryAnswer,
        RelationKind::QueryIntent,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            RelationKind::QueryQuery => "qq",
            RelationKind::QueryAnswer => "qa",
            RelationKind::QueryIntent => "qi",
        }
    }

    pub fn bank_index(self) -> usize {
        match self {
            RelationKind::QueryQuery => 0,
            RelationKind::QueryAnswer => 1,
            RelationKind::QueryIntent => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptElement {
    Text(u32),
    Relation { kind: RelationKind, index: usize },
    Cls,
    Sep,
    Pad,
}

/// A fully laid-out prompt: [CLS] left [relation block] right [SEP] [PAD...],
/// always padded to max_len.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptSequence {
    pub elements: Vec<PromptElement>,
    /// Position where the relation block begins (1 + kept left tokens); also
    /// meaningful when the block is empty.
    pub relation_start: usize,
}

impl PromptSequence {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Length through SEP inclusive; everything after is PAD.
    pub fn used_len(&self) -> usize {
        self.elements
            .iter()
            .rposition(|e| *e == PromptElement::Sep)
            .expect("prompt has a SEP")
            + 1
    }

    /// Positions eligible for masking: exactly the text-token positions.
    pub fn maskable_positions(&self) -> Vec<usize> {
        self.elements
            .iter()
            .enumerate()
            .filter_map(|(i, e)| matches!(e, PromptElement::Text(_)).then_some(i))
            .collect()
    }

    pub fn pad_mask(&self) -> Vec<bool> {
        self.elements
            .iter()
            .map(|e| *e == PromptElement::Pad)
            .collect()
    }

    /// Debug rendering: `CLS T7 Zqq0 SEP PAD`.
    pub fn render(&self) -> String {
        let parts: Vec<String> = self
            .elements
            .iter()
            .map(|e| match e {
                PromptElement::Text(id) => format!("T{id}"),
                PromptElement::Relation { kind, index } => format!("Z{}{index}", kind.tag()),
                PromptElement::Cls => "CLS".to_string(),
                PromptElement::Sep => "SEP".to_string(),
                PromptElement::Pad => "PAD".to_string(),
            })
            .collect();
        parts.join(" ")
    }
}

/// Splits `budget` kept-token slots between two sides: no truncation when
/// everything fits; otherwise equal shares (odd slot to the left), with any
/// share one side cannot use going to the other.
fn split_budget(left_len: usize, right_len: usize, budget: usize) -> (usize, usize) {
    if left_len + right_len <= budget {
        return (left_len, right_len);
    }
    let left_share = budget.div_ceil(2);
    let right_share = budget / 2;
    if left_len <= left_share {
        (left_len, budget - left_len)
    } else if right_len <= right_share {
        (budget - right_len, right_len)
    } else {
        (left_share, right_share)
    }
}

fn build(
    left: &[u32],
    left_keep: usize,
    kind: RelationKind,
    right: &[u32],
    right_keep: usize,
    m: usize,
    max_len: usize,
) -> PromptSequence {
    let mut elements = Vec::with_capacity(max_len);
    elements.push(PromptElement::Cls);
    elements.extend(left[..left_keep].iter().map(|&id| PromptElement::Text(id)));
    let relation_start = elements.len();
    elements.extend((0..m).map(|index| PromptElement::Relation { kind, index }));
    elements.extend(right[..right_keep].iter().map(|&id| PromptElement::Text(id)));
    elements.push(PromptElement::Sep);
    elements.resize(max_len, PromptElement::Pad);
    PromptSequence {
        elements,
        relation_start,
    }
}

/// [CLS] left [Z_kind x m] right [SEP] with tail truncation sharing the
/// budget equally (odd slot to the left). Both sides must keep at least one
/// token.
pub fn assemble_relation_prompt(
    left: &[u32],
    kind: RelationKind,
    right: &[u32],
    m: usize,
    max_len: usize,
) -> Result<PromptSequence> {
    if m < 1 {
        return Err(Error::config("relation prompts need at least 1 relation token"));
    }
    if max_len < m + 4 {
        return Err(Error::config(format!(
            "max_len {max_len} cannot hold CLS, SEP, {m} relation tokens, and one token per side"
        )));
    }
    if left.is_empty() || right.is_empty() {
        return Err(Error::data(
            "relation prompt needs at least one token on each side",
        ));
    }
    let budget = max_len - 2 - m;
    let (left_keep, right_keep) = split_budget(left.len(), right.len(), budget);
    Ok(build(left, left_keep, kind, right, right_keep, m, max_len))
}

/// [CLS] query [Z_qi x m] intent-name [SEP]; the intent name is never
/// truncated, the query absorbs the entire overflow. m = 0 degenerates to
/// plain concatenation.
pub fn assemble_intent_prompt(
    query: &[u32],
    intent_name: &[u32],
    m: usize,
    max_len: usize,
) -> Result<PromptSequence> {
    if max_len < m + 4 {
        return Err(Error::config(format!(
            "max_len {max_len} cannot hold CLS, SEP, {m} relation tokens, and one token per side"
        )));
    }
    if query.is_empty() {
        return Err(Error::data("intent prompt needs a non-empty query"));
    }
    if intent_name.is_empty() {
        return Err(Error::data("intent prompt needs a non-empty intent name"));
    }
    let budget = max_len - 2 - m;
    if intent_name.len() + 1 > budget {
        return Err(Error::data(format!(
            "intent name of {} tokens leaves no room for the query (budget {budget})",
            intent_name.len()
        )));
    }
    let query_keep = query.len().min(budget - intent_name.len());
    Ok(build(
        query,
        query_keep,
        RelationKind::QueryIntent,
        intent_name,
        intent_name.len(),
        m,
        max_len,
    ))
}

/// Bare [CLS] tokens [SEP] prompt: used for text-only pretraining and for
/// pooling a query on its own.
pub fn assemble_plain_prompt(tokens: &[u32], max_len: usize) -> Result<PromptSequence> {
    if max_len < 3 {
        return Err(Error::config(format!(
            "max_len {max_len} cannot hold CLS, SEP, and one token"
        )));
    }
    if tokens.is_empty() {
        return Err(Error::data("plain prompt needs at least one token"));
    }
    let keep = tokens.len().min(max_len - 2);
    let mut elements = Vec::with_capacity(max_len);
    elements.push(PromptElement::Cls);
    elements.extend(tokens[..keep].iter().map(|&id| PromptElement::Text(id)));
    let relation_start = elements.len();
    elements.push(PromptElement::Sep);
    elements.resize(max_len, PromptElement::Pad);
    Ok(PromptSequence {
        elements,
        relation_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Budget oracle, transcribed from the stated rule independently of
    /// split_budget: equal shares with the odd slot to the left, unused
    /// share flowing to the other side.
    fn oracle_split(left: usize, right: usize, budget: usize) -> (usize, usize) {
        if left + right <= budget {
            return (left, right);
        }
        let mut lk = (budget + 1) / 2;
        let mut rk = budget - lk;
        if left < lk {
            rk += lk - left;
            lk = left;
        }
        if right < rk {
            lk += rk - right;
            rk = right;
        }
        (lk.min(left), rk.min(right))
    }

    fn el_census(p: &PromptSequence) -> (usize, usize, usize, usize, usize) {
        let mut cls = 0;
        let mut sep = 0;
        let mut text = 0;
        let mut rel = 0;
        let mut pad = 0;
        for e in &p.elements {
            match e {
                PromptElement::Cls => cls += 1,
                PromptElement::Sep => sep += 1,
                PromptElement::Text(_) => text += 1,
                PromptElement::Relation { .. } => rel += 1,
                PromptElement::Pad => pad += 1,
            }
        }
        (cls, sep, text, rel, pad)
    }

    #[test]
    fn relation_layout_hand_example() {
        let p =
            assemble_relation_prompt(&[7, 8], RelationKind::QueryQuery, &[9], 3, 10).unwrap();
        assert_eq!(p.render(), "CLS T7 T8 Zqq0 Zqq1 Zqq2 T9 SEP PAD PAD");
        assert_eq!(p.relation_start, 3);
        assert_eq!(p.used_len(), 8);
        assert_eq!(p.maskable_positions(), vec![1, 2, 6]);
    }

    #[test]
    fn empty_side_is_rejected() {
        assert!(assemble_relation_prompt(&[7], RelationKind::QueryQuery, &[], 1, 10).is_err());
        assert!(assemble_relation_prompt(&[], RelationKind::QueryAnswer, &[7], 1, 10).is_err());
    }

    #[test]
    fn long_sides_split_the_budget_with_odd_slot_left() {
        let left: Vec<u32> = (100..150).collect();
        let right: Vec<u32> = (200..250).collect();
        let p = assemble_relation_prompt(&left, RelationKind::QueryAnswer, &right, 3, 32).unwrap();
        // budget 32-2-3 = 27 -> 14 left, 13 right
        let kept_left = p.relation_start - 1;
        let kept_right = p.used_len() - 1 - (p.relation_start + 3);
        assert_eq!((kept_left, kept_right), (14, 13));
        assert_eq!(p.len(), 32);
        // kept tokens are the prefixes
        assert_eq!(p.elements[1], PromptElement::Text(100));
        assert_eq!(p.elements[14], PromptElement::Text(113));
        assert_eq!(p.elements[18], PromptElement::Text(200));
    }

    #[test]
    fn short_side_donates_unused_budget() {
        let left: Vec<u32> = (100..102).collect();
        let right: Vec<u32> = (200..250).collect();
        let p = assemble_relation_prompt(&left, RelationKind::QueryQuery, &right, 3, 32).unwrap();
        let kept_left = p.relation_start - 1;
        let kept_right = p.used_len() - 1 - (p.relation_start + 3);
        assert_eq!((kept_left, kept_right), (2, 25));
    }

    #[test]
    fn intent_layout_hand_example() {
        let p = assemble_intent_prompt(&[5], &[6, 6], 2, 8).unwrap();
        assert_eq!(p.render(), "CLS T5 Zqi0 Zqi1 T6 T6 SEP PAD");
    }

    #[test]
    fn intent_prompt_m0_is_plain_concatenation() {
        let p = assemble_intent_prompt(&[5, 7], &[6], 0, 8).unwrap();
        assert_eq!(p.render(), "CLS T5 T7 T6 SEP PAD PAD PAD");
        assert_eq!(p.relation_start, 3);
    }

    #[test]
    fn intent_name_is_never_truncated() {
        // budget = 12-2-3 = 7; name of 6 leaves 1 query slot.
        let query: Vec<u32> = (10..30).collect();
        let name: Vec<u32> = (50..56).collect();
        let p = assemble_intent_prompt(&query, &name, 3, 12).unwrap();
        let kept_query = p.relation_start - 1;
        assert_eq!(kept_query, 1);
        let name_kept: Vec<u32> = p.elements[p.relation_start + 3..p.used_len() - 1]
            .iter()
            .map(|e| match e {
                PromptElement::Text(id) => *id,
                other => panic!("unexpected {other:?}"),
            })
            .collect();
        assert_eq!(name_kept, name);

        // name of 7 leaves no query slot: error, not truncation.
        let name7: Vec<u32> = (50..57).collect();
        assert!(assemble_intent_prompt(&query, &name7, 3, 12).is_err());
    }

    #[test]
    fn too_small_max_len_is_a_config_error() {
        assert!(assemble_relation_prompt(&[1], RelationKind::QueryQuery, &[2], 3, 6).is_err());
        assert!(assemble_relation_prompt(&[1], RelationKind::QueryQuery, &[2], 3, 7).is_ok());
    }

    #[test]
    fn plain_prompt_layout() {
        let p = assemble_plain_prompt(&[4], 4).unwrap();
        assert_eq!(p.render(), "CLS T4 SEP PAD");
        assert_eq!(p.maskable_positions(), vec![1]);
        let long = assemble_plain_prompt(&(0..100).collect::<Vec<u32>>(), 8).unwrap();
        assert_eq!(long.used_len(), 8);
        assert!(assemble_plain_prompt(&[], 8).is_err());
    }

    proptest! {
        #[test]
        fn census_and_oracle_agree(
            left_len in 1usize..60,
            right_len in 1usize..60,
            m in 1usize..5,
            extra in 0usize..40,
        ) {
            let max_len = m + 4 + extra;
            let left: Vec<u32> = (0..left_len as u32).collect();
            let right: Vec<u32> = (1000..1000 + right_len as u32).collect();
            let p = assemble_relation_prompt(&left, RelationKind::QueryQuery, &right, m, max_len)
                .unwrap();

            let budget = max_len - 2 - m;
            let (elk, erk) = oracle_split(left_len, right_len, budget);
            let kept_left = p.relation_start - 1;
            let kept_right = p.used_len() - 1 - (p.relation_start + m);
            prop_assert_eq!((kept_left, kept_right), (elk, erk));
            prop_assert!(kept_left >= 1 && kept_right >= 1);

            let (cls, sep, text, rel, pad) = el_census(&p);
            prop_assert_eq!(cls, 1);
            prop_assert_eq!(sep, 1);
            prop_assert_eq!(rel, m);
            prop_assert_eq!(text, elk + erk);
            prop_assert_eq!(pad, max_len - 2 - m - text);
            prop_assert_eq!(p.len(), max_len);

            // kept tokens are prefixes, in order
            for (i, e) in p.elements[1..1 + kept_left].iter().enumerate() {
                prop_assert_eq!(*e, PromptElement::Text(left[i]));
            }
            for (i, e) in p.elements[p.relation_start + m..p.relation_start + m + kept_right]
                .iter()
                .enumerate()
            {
                prop_assert_eq!(*e, PromptElement::Text(right[i]));
            }
            // relation block indices are 0..m in order
            for (i, e) in p.elements[p.relation_start..p.relation_start + m].iter().enumerate() {
                prop_assert_eq!(
                    *e,
                    PromptElement::Relation { kind: RelationKind::QueryQuery, index: i }
                );
            }
            // SEP directly after the right block, PAD only after SEP
            prop_assert_eq!(p.elements[p.used_len() - 1], PromptElement::Sep);
            for e in &p.elements[p.used_len()..] {
                prop_assert_eq!(*e, PromptElement::Pad);
            }

            // maskable positions equal a brute-force scan
            let scan: Vec<usize> = (0..p.len())
                .filter(|&i| matches!(p.elements[i], PromptElement::Text(_)))
                .collect();
            prop_assert_eq!(p.maskable_positions(), scan);

            // purity: same inputs, same output
            let p2 = assemble_relation_prompt(&left, RelationKind::QueryQuery, &right, m, max_len)
                .unwrap();
            prop_assert_eq!(p, p2);
        }

        #[test]
        fn intent_prompt_census(
            query_len in 1usize..50,
            name_len in 1usize..6,
            m in 0usize..5,
            extra in 0usize..30,
        ) {
            let max_len = m + 4 + extra;
            let budget = max_len - 2 - m;
            let query: Vec<u32> = (0..query_len as u32).collect();
            let name: Vec<u32> = (500..500 + name_len as u32).collect();
            let result = assemble_intent_prompt(&query, &name, m, max_len);
            if name_len + 1 > budget {
                prop_assert!(result.is_err());
                return Ok(());
            }
            let p = result.unwrap();
            let kept_query = p.relation_start - 1;
            prop_assert_eq!(kept_query, query_len.min(budget - name_len));
            let (cls, sep, text, rel, _) = el_census(&p);
            prop_assert_eq!((cls, sep, rel), (1, 1, m));
            prop_assert_eq!(text, kept_query + name_len);
        }
    }
}
