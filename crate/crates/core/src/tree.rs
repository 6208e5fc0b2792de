//! Constituency trees and PTB-style bracketing I/O.

use std::fmt;

use crate::error::{Error, Result};

/// A constituency tree over a token sequence. Predicted trees are binary
/// and unlabeled; gold trees may be n-ary and labeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tree {
    Leaf { index: usize, token: String },
    Node { label: Option<String>, children: Vec<Tree> },
}

/// Half-open token range `[start, end)` covered by a constituent.
pub type SpanRange = (usize, usize);

impl Tree {
    pub fn leaf(index: usize, token: impl Into<String>) -> Self {
        Tree::Leaf {
            index,
            token: token.into(),
        }
    }

    pub fn node(children: Vec<Tree>) -> Self {
        Tree::Node { label: None, children }
    }

    pub fn labeled(label: impl Into<String>, children: Vec<Tree>) -> Self {
        Tree::Node {
            label: Some(label.into()),
            children,
        }
    }

    pub fn binary(left: Tree, right: Tree) -> Self {
        Tree::node(vec![left, right])
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf { .. })
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Tree::Node { label, .. } => label.as_deref(),
            Tree::Leaf { .. } => None,
        }
    }

    pub fn children(&self) -> &[Tree] {
        match self {
            Tree::Node { children, .. } => children,
            Tree::Leaf { .. } => &[],
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 1,
            Tree::Node { children, .. } => children.iter().map(Tree::num_leaves).sum(),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_tokens(&mut out);
        out
    }

    fn collect_tokens(&self, out: &mut Vec<String>) {
        match self {
            Tree::Leaf { token, .. } => out.push(token.clone()),
            Tree::Node { children, .. } => children.iter().for_each(|c| c.collect_tokens(out)),
        }
    }

    /// Leaf indices in left-to-right order.
    pub fn leaf_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.walk_leaves(&mut |i, _| out.push(i));
        out
    }

    fn walk_leaves(&self, f: &mut impl FnMut(usize, &str)) {
        match self {
            Tree::Leaf { index, token } => f(*index, token),
            Tree::Node { children, .. } => children.iter().for_each(|c| c.walk_leaves(f)),
        }
    }

    /// Range covered by this subtree, from its first and last leaf.
    pub fn span(&self) -> SpanRange {
        match self {
            Tree::Leaf { index, .. } => (*index, index + 1),
            Tree::Node { children, .. } => {
                let first = children.first().map(|c| c.span().0).unwrap_or(0);
                let last = children.last().map(|c| c.span().1).unwrap_or(0);
                (first, last)
            }
        }
    }

    /// Every internal node's range and label, pre-order.
    pub fn constituents(&self) -> Vec<(SpanRange, Option<&str>)> {
        let mut out = Vec::new();
        self.collect_constituents(&mut out);
        out
    }

    fn collect_constituents<'a>(&'a self, out: &mut Vec<(SpanRange, Option<&'a str>)>) {
        if let Tree::Node { label, children } = self {
            out.push((self.span(), label.as_deref()));
            children.iter().for_each(|c| c.collect_constituents(out));
        }
    }

    pub fn is_binary(&self) -> bool {
        match self {
            Tree::Leaf { .. } => true,
            Tree::Node { children, .. } => children.len() == 2 && children.iter().all(Tree::is_binary),
        }
    }

    pub fn internal_count(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 0,
            Tree::Node { children, .. } => 1 + children.iter().map(Tree::internal_count).sum::<usize>(),
        }
    }

    /// Height in edges: 0 for a leaf.
    pub fn depth(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 0,
            Tree::Node { children, .. } => 1 + children.iter().map(Tree::depth).max().unwrap_or(0),
        }
    }

    /// Renumbers leaves 0, 1, … left to right.
    pub fn reindex(&mut self) {
        let mut next = 0;
        self.reindex_from(&mut next);
    }

    fn reindex_from(&mut self, next: &mut usize) {
        match self {
            Tree::Leaf { index, .. } => {
                *index = *next;
                *next += 1;
            }
            Tree::Node { children, .. } => children.iter_mut().for_each(|c| c.reindex_from(next)),
        }
    }

    /// Drops every label.
    pub fn unlabeled(&self) -> Tree {
        match self {
            Tree::Leaf { .. } => self.clone(),
            Tree::Node { children, .. } => Tree::node(children.iter().map(Tree::unlabeled).collect()),
        }
    }

    /// PTB-style bracketing; labels are written when present.
    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_into(&mut s);
        s
    }

    fn render_into(&self, out: &mut String) {
        match self {
            Tree::Leaf { token, .. } => out.push_str(token),
            Tree::Node { label, children } => {
                out.push('(');
                let mut first = true;
                if let Some(l) = label {
                    out.push_str(l);
                    first = false;
                }
                for c in children {
                    if !first {
                        out.push(' ');
                    }
                    first = false;
                    c.render_into(out);
                }
                out.push(')');
            }
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Renders a tree (convenience wrapper for [`Tree::render`]).
pub fn render_tree(tree: &Tree) -> String {
    tree.render()
}

/// How bracket heads are interpreted when reading trees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeFormat {
    /// Every element of a list is a child; atoms are tokens.
    Unlabeled,
    /// A list starting with an atom uses it as the label: `(NP the cat)`.
    Labeled,
    /// Unlabeled when every list has exactly two elements, labeled otherwise.
    Auto,
}

#[derive(Debug)]
enum SExpr {
    Atom(String),
    List(Vec<SExpr>, usize),
}

fn read_sexpr(text: &str) -> Result<SExpr> {
    let bytes = text.as_bytes();
    let mut pos = 0;
    let skip_ws = |pos: &mut usize| {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
    };
    fn syntax(pos: usize, msg: &str) -> Error {
        Error::TreeSyntax {
            pos,
            msg: msg.into(),
        }
    }
    let mut stack: Vec<(Vec<SExpr>, usize)> = Vec::new();
    let mut result = None;
    loop {
        skip_ws(&mut pos);
        if pos >= bytes.len() {
            break;
        }
        if result.is_some() {
            return Err(syntax(pos, "trailing input after tree"));
        }
        match bytes[pos] {
            b'(' => {
                stack.push((Vec::new(), pos));
                pos += 1;
            }
            b')' => {
                let (items, start) = stack.pop().ok_or_else(|| syntax(pos, "unbalanced ')'"))?;
                if items.is_empty() {
                    return Err(syntax(start, "empty constituent"));
                }
                let list = SExpr::List(items, start);
                pos += 1;
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(list),
                    None => result = Some(list),
                }
            }
            _ => {
                let start = pos;
                while pos < bytes.len()
                    && !bytes[pos].is_ascii_whitespace()
                    && bytes[pos] != b'('
                    && bytes[pos] != b')'
                {
                    pos += 1;
                }
                let atom = SExpr::Atom(text[start..pos].to_owned());
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(atom),
                    None => return Err(syntax(start, "expected '('")),
                }
            }
        }
    }
    if let Some((_, start)) = stack.last() {
        return Err(syntax(*start, "unbalanced '('"));
    }
    result.ok_or_else(|| syntax(0, "no tree"))
}

fn all_binary(e: &SExpr) -> bool {
    match e {
        SExpr::Atom(_) => true,
        SExpr::List(items, _) => items.len() == 2 && items.iter().all(all_binary),
    }
}

fn convert(e: SExpr, labeled: bool, next: &mut usize) -> Result<Tree> {
    match e {
        SExpr::Atom(token) => {
            let t = Tree::leaf(*next, token);
            *next += 1;
            Ok(t)
        }
        SExpr::List(items, start) => {
            let mut items = items.into_iter().peekable();
            let label = match (labeled, items.peek()) {
                (true, Some(SExpr::Atom(_))) => match items.next() {
                    Some(SExpr::Atom(l)) => Some(l),
                    _ => unreachable!(),
                },
                _ => None,
            };
            let children = items
                .map(|c| convert(c, labeled, next))
                .collect::<Result<Vec<_>>>()?;
            if children.is_empty() {
                return Err(Error::TreeSyntax {
                    pos: start,
                    msg: "empty constituent".into(),
                });
            }
            Ok(Tree::Node { label, children })
        }
    }
}

pub fn parse_sexpr_with(text: &str, format: TreeFormat) -> Result<Tree> {
    let e = read_sexpr(text)?;
    let labeled = match format {
        TreeFormat::Labeled => true,
        TreeFormat::Unlabeled => false,
        TreeFormat::Auto => !all_binary(&e),
    };
    let mut next = 0;
    convert(e, labeled, &mut next)
}

/// Reads one bracketed tree, guessing whether heads are labels ([`TreeFormat::Auto`]).
pub fn parse_sexpr(text: &str) -> Result<Tree> {
    parse_sexpr_with(text, TreeFormat::Auto)
}

/// One tree per non-blank line.
pub fn parse_treebank(text: &str, format: TreeFormat) -> Result<Vec<Tree>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_sexpr_with(l, format).map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn leaf_pair_renders() {
        let t = Tree::binary(Tree::leaf(0, "x"), Tree::leaf(1, "y"));
        assert_eq!(t.render(), "(x y)");
    }

    #[test]
    fn labeled_tree_reads_directly() {
        let t = parse_sexpr("(S (NP the cat) (VP sat))").unwrap();
        assert_eq!(t.label(), Some("S"));
        assert_eq!(t.children().len(), 2);
        assert_eq!(t.children()[0].label(), Some("NP"));
        assert_eq!(t.children()[1].label(), Some("VP"));
        assert_eq!(t.tokens(), vec!["the", "cat", "sat"]);
        assert_eq!(t.leaf_indices(), vec![0, 1, 2]);
        assert_eq!(t.render(), "(S (NP the cat) (VP sat))");
    }

    #[test]
    fn ptb_wrapper_and_preterminals() {
        let t = parse_sexpr_with("( (S (NP (DT the) (NN cat)) (. .)) )", TreeFormat::Labeled).unwrap();
        assert_eq!(t.label(), None);
        assert_eq!(t.tokens(), vec!["the", "cat", "."]);
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(parse_sexpr("(a (b c)"), Err(Error::TreeSyntax { .. })));
        assert!(parse_sexpr("(a b))").is_err());
        assert!(parse_sexpr("(a ())").is_err());
        assert!(parse_sexpr_with("(S (NP) b)", TreeFormat::Labeled).is_err());
        assert!(parse_sexpr("a b").is_err());
        assert!(parse_sexpr("").is_err());
    }

    #[test]
    fn depth_and_spans() {
        let rb = parse_sexpr("(a (b (c d)))").unwrap();
        assert_eq!(rb.depth(), 3);
        let bal = parse_sexpr("((a b) (c d))").unwrap();
        assert_eq!(bal.depth(), 2);
        assert_eq!(Tree::leaf(0, "a").depth(), 0);
        let spans: Vec<_> = bal.constituents().into_iter().map(|(s, _)| s).collect();
        assert_eq!(spans, vec![(0, 4), (0, 2), (2, 4)]);
    }

    pub(crate) fn arb_binary(max_leaves: usize) -> impl Strategy<Value = Tree> {
        let leaf = "[a-z]{1,4}".prop_map(|t| Tree::leaf(0, t));
        let sub = leaf.prop_recursive(8, max_leaves as u32, 2, |inner| {
            (inner.clone(), inner).prop_map(|(l, r)| Tree::binary(l, r))
        });
        (sub.clone(), sub).prop_map(|(l, r)| {
            let mut t = Tree::binary(l, r);
            t.reindex();
            t
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn binary_round_trip(t in arb_binary(24)) {
            let back = parse_sexpr_with(&t.render(), TreeFormat::Unlabeled).unwrap();
            prop_assert_eq!(&back, &t);
            // Auto detection reads every binary unlabeled tree as unlabeled.
            prop_assert_eq!(parse_sexpr(&t.render()).unwrap(), t);
        }
    }
}
